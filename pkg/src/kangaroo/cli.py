"""``kangaroo`` command line: one subcommand per scenario.

Each command loads and validates a config, runs its pipeline fully in memory
and only then writes its files. Files are staged in a temporary directory
inside ``--out`` and renamed into place, so a failed run leaves nothing
behind. Exit codes: 0 ok, 2 config error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, RobotConfig, analysis_setup, combined_settings, config_from_dict, config_hash,
                     dump_config, effective_config, hop_settings, leg_jump_settings, load_config)
from .jump_analysis import JOINT_NAMES, analyze_jump
from .scenarios import SimSettings, run_combined, run_hop, run_leg_jump, tail_tip_height
from .svg import Series, columns_plot, line_plot
from .tail import (closed_form_equilibrium, simulate_tail, tail_static_equilibrium, tail_stiffness_metric,
                   tail_tip)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class Outputs(dict):
    """File name -> text content for one command."""


def _csv(header, rows, meta=None) -> str:
    buf = io.StringIO()
    for k in sorted(meta or {}):
        buf.write(f"# {k}: {meta[k]}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{float(v):.9g}" for v in row])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _meta(cfg: RobotConfig, command: str) -> dict:
    return {"command": command, "config_hash": config_hash(cfg), "seed": cfg.seed, "version": __version__}


def _sim(cfg: RobotConfig) -> SimSettings:
    return cfg.sim.build()


# -- commands ----------------------------------------------------------------------

def cmd_analyze_jump(cfg: RobotConfig) -> Outputs:
    model, routing, leap, posture, attach = analysis_setup(cfg)
    res = analyze_jump(model, routing, leap, posture, attach)
    joints = JOINT_NAMES[1:]
    names = list(res.muscle_names)
    header = (["t", "cog_x", "cog_z"] + [f"theta_{j}" for j in JOINT_NAMES] + [f"tau_{j}" for j in joints]
              + [f"f_{m}" for m in names] + [f"v_{m}" for m in names] + ["feasible"])
    st = res.cog.stance
    cog = np.column_stack([res.cog.x[st], res.cog.z[st]])
    rows = np.column_stack([res.t, cog, res.theta, res.tau[:, 1:], res.muscles.f, res.muscles.velocity,
                            res.muscles.feasible.astype(float)])
    out = Outputs()
    out["analysis.csv"] = _csv(header, rows, _meta(cfg, "analyze-jump"))
    out["joint_angles.svg"] = columns_plot(res.t, np.rad2deg(res.theta), list(JOINT_NAMES),
                                           title="Joint angles during stance", xlabel="time [s]",
                                           ylabel="angle [deg]")
    out["muscle_tension.svg"] = columns_plot(res.t, res.muscles.f, names, title="Muscle tension",
                                             xlabel="time [s]", ylabel="tension [N]")
    out["muscle_speed.svg"] = columns_plot(res.t, res.muscles.velocity, names, title="Muscle contraction speed",
                                           xlabel="time [s]", ylabel="dL/dt [m/s]")
    out["summary.json"] = _json({"command": "analyze-jump", **res.summary(), **_meta(cfg, "analyze-jump")})
    return out


def cmd_simulate_hop(cfg: RobotConfig) -> Outputs:
    meta = _meta(cfg, "simulate-hop")
    trace, metrics = run_hop(cfg.body.build(cfg.gravity), hop_settings(cfg), cfg.contact.build(), _sim(cfg), meta)
    out = Outputs()
    out["hop.csv"] = trace.to_csv()
    out["height.svg"] = line_plot([Series("COG height", trace.t, trace.cog[:, 1])], title="COG height",
                                  xlabel="time [s]", ylabel="z [m]", markers=metrics["apex_times"])
    out["tensions.svg"] = columns_plot(trace.t, trace.tensions, trace.muscle_names, title="Muscle tension",
                                       xlabel="time [s]", ylabel="tension [N]")
    out["summary.json"] = _json({**metrics, **meta})
    return out


def _tail_points(model, theta, gravity_on) -> np.ndarray:
    kin = model._chains[bool(gravity_on)].kinematics(np.asarray(theta, float))
    return np.vstack([kin.origin[0]] + [kin.link_tip(i) for i in range(model.n_joints)])


def cmd_tail_static(cfg: RobotConfig) -> Outputs:
    model = cfg.tail.build(cfg.gravity)
    run = cfg.tail_run
    fu, fl = run.f_upper, run.f_lower
    free = tail_static_equilibrium(model, fu, fl, gravity_on=False)
    loaded = tail_static_equilibrium(model, fu, fl, gravity_on=True) if run.gravity_on else free
    closed = closed_form_equilibrium(model, fu, fl)
    stiffness = tail_stiffness_metric(model, fu, fl)
    meta = _meta(cfg, "tail-static")
    rows = [(i, a, b, c) for i, (a, b, c) in enumerate(zip(free, loaded, closed))]
    out = Outputs()
    out["tail_static.csv"] = _csv(["joint", "theta_no_gravity", "theta_loaded", "theta_closed_form"], rows, meta)
    shapes = [("no gravity", _tail_points(model, free, False))]
    if run.gravity_on:
        shapes.append(("with gravity", _tail_points(model, loaded, True)))
    out["tail_shape.svg"] = line_plot([Series(n, p[:, 0], p[:, 1]) for n, p in shapes], title="Tail shape",
                                      xlabel="x [m]", ylabel="y [m]")
    out["summary.json"] = _json({
        "f_upper": fu, "f_lower": fl,
        "bend_per_joint": float(free.mean()),
        "uniform": bool(np.ptp(free) < 1e-9),
        "theta_no_gravity": free.tolist(),
        "theta_loaded": loaded.tolist(),
        "gravity_on": run.gravity_on,
        "tip_loaded": tail_tip(model, loaded, run.gravity_on).tolist(),
        "stiffness_metric": stiffness,
        **meta,
    })
    return out


def cmd_tail_dynamic(cfg: RobotConfig) -> Outputs:
    model = cfg.tail.build(cfg.gravity)
    run = cfg.tail_run
    w = 2 * np.pi * run.drive_frequency

    def drive(t):
        d = run.drive_amplitude * np.sin(w * t)
        return max(run.drive_mean + d, 0.0), max(run.drive_mean - d, 0.0)

    lim = max(run.drive_mean + run.drive_amplitude, 0.0)
    if lim > model.f_max:
        raise ConfigError("tail_run: drive_mean + drive_amplitude exceeds tail.f_max")
    tr = simulate_tail(model, drive, run.duration, run.dt, gravity_on=run.gravity_on,
                       record_every=run.record_every)
    meta = _meta(cfg, "tail-dynamic")
    n = model.n_joints
    header = ["t"] + [f"theta_{i}" for i in range(n)] + ["tip_x", "tip_y", "f_upper", "f_lower", "energy"]
    rows = np.column_stack([tr.t, tr.theta, tr.tip, tr.f_upper, tr.f_lower, tr.energy])
    out = Outputs()
    out["tail_dynamic.csv"] = _csv(header, rows, meta)
    out["tail_tip.svg"] = columns_plot(tr.t, tr.tip, ["tip x", "tip y"], title="Tail tip position",
                                       xlabel="time [s]", ylabel="position [m]")
    out["tail_tension.svg"] = columns_plot(tr.t, np.column_stack([tr.f_upper, tr.f_lower]), ["upper", "lower"],
                                           title="Wire tension", xlabel="time [s]", ylabel="tension [N]")
    out["summary.json"] = _json({
        "tip_y_range": [float(tr.tip[:, 1].min()), float(tr.tip[:, 1].max())],
        "max_joint_angle": float(np.abs(tr.theta).max()),
        "energy_drift": float(np.ptp(tr.energy)),
        **meta,
    })
    return out


def cmd_leg_jump(cfg: RobotConfig) -> Outputs:
    meta = _meta(cfg, "leg-jump")
    s = leg_jump_settings(cfg)
    trace, metrics = run_leg_jump(cfg.body.build(cfg.gravity), s, cfg.contact.build(), _sim(cfg), meta)
    out = Outputs()
    out["leg_jump.csv"] = trace.to_csv()
    push = (s.command.start, s.command.start + s.command.duration)
    out["torso_height.svg"] = line_plot([Series("torso z", trace.t, trace.q[:, 1])], title="Torso height",
                                        xlabel="time [s]", ylabel="z [m]", markers=push)
    out["tensions.svg"] = columns_plot(trace.t, trace.tensions, trace.muscle_names, title="Muscle tension",
                                       xlabel="time [s]", ylabel="tension [N]", markers=push)
    out["summary.json"] = _json({**metrics, **meta})
    return out


def cmd_combined_jump(cfg: RobotConfig) -> Outputs:
    meta = _meta(cfg, "combined-jump")
    s = combined_settings(cfg)
    params, contact, sim = cfg.body.build(cfg.gravity), cfg.contact.build(), _sim(cfg)
    results = {kind: run_combined(params, s, kind, contact, sim, {**meta, "tail": kind})
               for kind in ("chain", "locked")}
    out = Outputs()
    push = (s.legs.start, s.legs.start + s.legs.duration)
    force, tip = [], []
    for kind, (body, trace, metrics) in results.items():
        label = "elastic" if kind == "chain" else "locked"
        out[f"combined_{label}.csv"] = trace.to_csv()
        force.append(Series(label, trace.t, trace.total_normal_force()))
        tip.append(Series(label, trace.t, np.array([tail_tip_height(body, q) for q in trace.q])))
    out["contact_force.svg"] = line_plot(force, title="Total ground force", xlabel="time [s]",
                                         ylabel="force [N]", markers=push)
    out["tail_tip.svg"] = line_plot(tip, title="Tail tip height", xlabel="time [s]", ylabel="z [m]", markers=push)
    elastic, locked = results["chain"][2], results["locked"][2]
    out["summary.json"] = _json({
        "elastic": elastic,
        "locked": locked,
        "softer_landing": (bool(elastic["peak_landing_force"] < locked["peak_landing_force"])
                           if elastic["pushed"] and locked["pushed"] else None),
        **meta,
    })
    return out


COMMANDS = {
    "analyze-jump": cmd_analyze_jump,
    "simulate-hop": cmd_simulate_hop,
    "tail-static": cmd_tail_static,
    "tail-dynamic": cmd_tail_dynamic,
    "leg-jump": cmd_leg_jump,
    "combined-jump": cmd_combined_jump,
}

HELP = {
    "analyze-jump": "inverse analysis of the reference leap: joint torques, muscle tensions and speeds",
    "simulate-hop": "whole-body hopping under the tension-capped controller",
    "tail-static": "tail equilibrium and stiffness for fixed wire tensions",
    "tail-dynamic": "tail swinging under an antiphase sinusoidal wire drive",
    "leg-jump": "scheduled leg push with the tail resting on the ground",
    "combined-jump": "leg and tail jump, elastic tail against a locked tail",
}


# -- plumbing ----------------------------------------------------------------------

def write_outputs(out_dir: str | Path, files: dict) -> None:
    """Stage every file, then move them into ``out_dir`` together."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(dir=out_dir, prefix=".stage-"))
    try:
        for name, text in files.items():
            path = stage / name
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        for name in files:
            target = out_dir / name
            target.parent.mkdir(parents=True, exist_ok=True)
            os.replace(stage / name, target)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def apply_overrides(cfg: RobotConfig, seed=None, dt=None, duration=None) -> RobotConfig:
    data = effective_config(cfg)
    if seed is not None:
        data["seed"] = seed
    if dt is not None:
        data["sim"]["dt"] = dt
        data["tail_run"]["dt"] = dt
    if duration is not None:
        for sec in ("hopper", "leg_jump", "combined", "tail_run"):
            data[sec]["duration"] = duration
    return config_from_dict(data)


def run_command(command: str, cfg: RobotConfig) -> Outputs:
    out = COMMANDS[command](cfg)
    out["effective_config.yaml"] = dump_config(cfg)
    return out


def _batch_job(args):
    command, path, out_dir = args
    cfg = load_config(path)
    key = config_hash(cfg)
    files = run_command(command, cfg)
    write_outputs(Path(out_dir) / key, files)
    return key, str(path), json.loads(files["summary.json"])


def run_batch(command: str, paths, out_dir, jobs: int = 1) -> dict:
    """Run one command over several configs in worker processes.

    Results land in ``out_dir/<config hash>/`` and are indexed in
    ``batch.json``.
    """
    for p in paths:
        load_config(p)  # fail on bad configs before spending time on any run
    work = [(command, p, str(out_dir)) for p in paths]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_batch_job, work))
    else:
        results = [_batch_job(w) for w in work]
    index = {key: {"config": path, "summary": summary} for key, path, summary in results}
    index = dict(sorted(index.items()))
    write_outputs(out_dir, {"batch.json": _json(index)})
    return index


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kangaroo", description="Kangaroo robot leg, tail and jump simulations.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        c = sub.add_parser(name, help=HELP[name])
        c.add_argument("--config", help="YAML config (default: packaged defaults)")
        c.add_argument("--out", default="out", help="output directory")
        c.add_argument("--seed", type=int, help="override the config seed")
        c.add_argument("--dt", type=float, help="physics step override [s]")
        c.add_argument("--duration", type=float, help="scenario duration override [s]")
        c.add_argument("--dump-effective-config", action="store_true",
                       help="print the fully populated config and exit")
    b = sub.add_parser("batch", help="run one command over many configs concurrently")
    b.add_argument("scenario", choices=sorted(COMMANDS))
    b.add_argument("configs", nargs="+", help="YAML configs, one run each")
    b.add_argument("--out", default="out", help="results go to OUT/<config hash>/")
    b.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "batch":
            index = run_batch(args.scenario, args.configs, args.out, max(args.jobs, 1))
            print(f"{len(index)} runs written to {args.out}")
            return EXIT_OK
        cfg = apply_overrides(load_config(args.config), args.seed, args.dt, args.duration)
        if args.dump_effective_config:
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        files = run_command(args.command, cfg)
        write_outputs(args.out, files)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any pipeline failure maps to exit 3
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{args.command}: wrote {len(files)} files to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
