"""Config-driven entry point for the whole-body simulations."""
from __future__ import annotations

from .config import RobotConfig, combined_settings, config_hash, hop_settings, leg_jump_settings
from .scenarios import run_combined, run_hop, run_leg_jump

SCENARIOS = ("hop", "leg-jump", "combined", "combined-locked")


def run_scenario(cfg: RobotConfig, kind: str = "hop"):
    """Run one scenario from a validated config; returns ``(trace, metrics)``.

    The trace metadata carries the config hash and seed, so a CSV can be
    traced back to the exact config that produced it.
    """
    if kind not in SCENARIOS:
        raise ValueError(f"unknown scenario {kind!r}; expected one of {', '.join(SCENARIOS)}")
    meta = {"config_hash": config_hash(cfg), "seed": cfg.seed, "scenario": kind}
    params, contact, sim = cfg.body.build(cfg.gravity), cfg.contact.build(), cfg.sim.build()
    if kind == "hop":
        return run_hop(params, hop_settings(cfg), contact, sim, meta)
    if kind == "leg-jump":
        return run_leg_jump(params, leg_jump_settings(cfg), contact, sim, meta)
    tail = "chain" if kind == "combined" else "locked"
    _, trace, metrics = run_combined(params, combined_settings(cfg), tail, contact, sim, meta)
    return trace, metrics
