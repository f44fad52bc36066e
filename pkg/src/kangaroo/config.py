"""Robot/scenario configuration: schema, YAML loading and model builders.

Every section has defaults, so an empty file is a valid config. Unknown keys
are rejected. ``effective_config`` returns the fully populated mapping that
``--dump-effective-config`` writes out.
"""
from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .dynamics import ChainModel, Link
from .hopping import HopperGains
from .jump_analysis import LeapParams
from .muscle import Muscle, MuscleRouting
from .robot import BodyParams
from .scenarios import (BeltRig, CombinedSettings, HopSettings, LegCommand, LegJumpSettings, SimSettings,
                        TailCommand)
from .sim import ContactModel
from .tail import TailModel

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message carries the offending field path."""


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


Point = tuple[float, float]


class LinkSpec(Strict):
    name: str
    mass: float = Field(ge=0)
    length: float = Field(gt=0)
    com: float | None = None
    inertia: float | None = Field(default=None, ge=0)

    def build(self, **kw) -> Link:
        return Link(self.mass, self.length, self.com, self.inertia, name=self.name, **kw)


class MuscleSpec(Strict):
    name: str
    # (link, (x, z)) via points; link -1 is the base/torso depending on the model
    path: list[tuple[int, Point]] = Field(min_length=2)
    f_max: float = Field(gt=0)

    def build(self) -> Muscle:
        return Muscle(self.name, tuple((l, tuple(p)) for l, p in self.path), self.f_max)


class LeapSpec(Strict):
    horizontal_velocity: float = Field(2.0, gt=0)
    stance_shift: float = Field(0.4, gt=0)
    flight_shift: float = Field(0.6, gt=0)
    torso_pitch_deg: float = 20.0
    sample_count: int = Field(2000, ge=100)
    touchdown_height: float = Field(0.55, gt=0)

    def build(self, gravity: float) -> LeapParams:
        return LeapParams(self.horizontal_velocity, self.stance_shift, self.flight_shift,
                          float(np.deg2rad(self.torso_pitch_deg)), self.sample_count,
                          self.touchdown_height, gravity)


def _default_analysis_links():
    return [
        LinkSpec(name="foot", mass=0.4, length=0.2),
        LinkSpec(name="shank", mass=0.5, length=0.28),
        LinkSpec(name="thigh", mass=0.3, length=0.2),
        LinkSpec(name="torso", mass=14.0, length=0.65, com=0.1),
    ]


def _default_analysis_muscles():
    def m(name, path):
        return MuscleSpec(name=name, path=path, f_max=1000.0)

    return [
        m("hip_ext", [(2, (0.336, -0.019)), (3, (0.25, 0.25))]),
        m("tri", [(0, (0.45, -0.25)), (1, (0.045, -0.07)), (1, (0.219, -0.058)),
                  (2, (-0.008, 0.097)), (2, (0.45, -0.25)), (3, (0.161, 0.036))]),
        m("knee_hip", [(1, (0.53, 0.25)), (2, (0.144, 0.06)), (2, (0.314, 0.209)),
                       (3, (-0.203, -0.106))]),
        m("flex", [(0, (0.171, 0.011)), (1, (0.008, -0.048)), (1, (0.257, -0.021)),
                   (2, (0.012, 0.048))]),
    ]


class AnalysisSpec(Strict):
    """Toe-rooted leg for the leap analysis: foot, shank, thigh, torso."""

    links: list[LinkSpec] = Field(default_factory=_default_analysis_links)
    # absolute link angles of the reference crouch, degrees
    posture_deg: tuple[float, float, float, float] = (115.0, 75.0, 130.0, 20.0)
    tail_attachment: Point = (-0.1, 0.0)
    muscles: list[MuscleSpec] = Field(default_factory=_default_analysis_muscles)
    leap: LeapSpec = Field(default_factory=LeapSpec)

    @field_validator("links")
    @classmethod
    def _four_links(cls, v):
        if len(v) != 4:
            raise ValueError("analysis leg needs exactly 4 links (foot, shank, thigh, torso)")
        return v


class TailSpec(Strict):
    n_joints: int = Field(8, ge=1)
    link_length: float = Field(0.05, gt=0)
    mass: float = Field(1.6, gt=0)
    moment_arm: float = Field(0.035, gt=0)
    stiffness: float = Field(10.0, gt=0)
    limit_deg: float = Field(30.0, gt=0)
    f_max: float = Field(450.0, gt=0)
    damping: float = Field(0.1, ge=0)
    penalty_factor: float = Field(100.0, ge=0)
    wire_stiffness_gain: float = Field(20.0, ge=0)

    def build(self, gravity: float = 9.81) -> TailModel:
        return TailModel(self.n_joints, self.link_length, self.mass, self.moment_arm, self.stiffness,
                         float(np.deg2rad(self.limit_deg)), self.f_max, self.damping,
                         self.penalty_factor, self.wire_stiffness_gain, gravity)


class TailRunSpec(Strict):
    """Tension commands for the standalone tail commands."""

    f_upper: float = Field(40.0, ge=0)
    f_lower: float = Field(30.0, ge=0)
    gravity_on: bool = True
    # antiphase drive for tail-dynamic: mean +- amplitude at frequency
    drive_mean: float = Field(25.0, ge=0)
    drive_amplitude: float = Field(15.0, ge=0)
    drive_frequency: float = Field(1.0, gt=0)
    duration: float = Field(12.0, gt=0)
    dt: float = Field(1e-4, gt=0, le=1e-2)
    record_every: int = Field(10, ge=1)


_B = BodyParams()

# designed so every leg muscle works during hopping stance (see hopping tests)
LEG_ARMS = [
    (-0.137, -0.1, 0.148),
    (0.072, 0.141, -0.093),
    (0.122, -0.131, 0.138),
    (-0.119, -0.132, -0.098),
]


class BodySpec(Strict):
    """Whole-body model: floating torso, merged hind leg, one-link tail."""

    torso_mass: float = Field(_B.torso_mass, gt=0)
    torso_length: float = Field(_B.torso_length, gt=0)
    torso_height: float = Field(_B.torso_height, gt=0)
    hip_mount: Point = _B.hip_mount
    tail_mount: Point = _B.tail_mount
    leg_masses: tuple[float, float, float] = _B.leg_masses
    leg_lengths: tuple[float, float, float] = _B.leg_lengths
    leg_limits_deg: tuple[Point, Point, Point] = _B.leg_limits_deg
    limit_stiffness: float = Field(_B.limit_stiffness, ge=0)
    limit_damping: float = Field(_B.limit_damping, ge=0)
    tail_mass: float = Field(_B.tail_mass, gt=0)
    tail_length: float = Field(_B.tail_length, gt=0)
    tail_stiffness: float = Field(_B.tail_stiffness, ge=0)
    tail_damping: float = Field(_B.tail_damping, ge=0)

    @field_validator("leg_masses", "leg_lengths")
    @classmethod
    def _positive(cls, v):
        if min(v) <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("leg_limits_deg")
    @classmethod
    def _ordered(cls, v):
        if any(lo >= hi for lo, hi in v):
            raise ValueError("each joint range needs lower < upper")
        return v

    def build(self, gravity: float) -> BodyParams:
        return BodyParams(**self.model_dump(), gravity=gravity)


class ContactSpec(Strict):
    ground_height: float = 0.0
    stiffness: float = Field(5e4, ge=0)
    damping: float = Field(500.0, ge=0)
    friction: float = Field(1.0, ge=0, le=2)

    def build(self) -> ContactModel:
        return ContactModel(**self.model_dump())


class SimSpec(Strict):
    dt: float = Field(1e-4, gt=0, le=1e-2)
    control_dt: float = Field(1e-3, gt=0)
    record_every: int = Field(10, ge=1)
    max_speed: float = Field(1e3, gt=0)

    def build(self) -> SimSettings:
        return SimSettings(**self.model_dump())


class LegMusclesSpec(Strict):
    """Torso-mounted leg wires over joint pulleys; ``arms`` rows are the
    signed pulley radii (dL/dtheta, m) at hip, knee and ankle."""

    names: list[str] = ["m1", "m2", "m3", "m4"]
    arms: list[tuple[float, float, float]] = LEG_ARMS
    f_max: float = Field(450.0, gt=0)

    @model_validator(mode="after")
    def _shapes(self):
        if len(self.names) != len(self.arms):
            raise ValueError("names and arms must have the same length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("muscle names must be unique")
        return self


_G = HopperGains()


class GainsSpec(Strict):
    spring_stiffness: float = Field(_G.spring_stiffness, ge=0)
    rest_length: float = Field(_G.rest_length, gt=0)
    energy_gain: float = Field(_G.energy_gain, ge=0)
    apex_height: float = Field(_G.apex_height, gt=0)
    target_velocity: float = _G.target_velocity
    cg_print_gain: float = Field(_G.cg_print_gain, ge=0)
    velocity_gain: float = Field(_G.velocity_gain, ge=0)
    horizontal_gain: float = Field(_G.horizontal_gain, ge=0)
    attitude_kp: float = Field(_G.attitude_kp, ge=0)
    attitude_kd: float = Field(_G.attitude_kd, ge=0)
    target_pitch: float = _G.target_pitch
    swing_kp: float = Field(_G.swing_kp, ge=0)
    swing_kd: float = Field(_G.swing_kd, ge=0)
    swing_acc_limit: float = Field(_G.swing_acc_limit, ge=0)
    foot_angle: float = _G.foot_angle
    foot_kp: float = Field(_G.foot_kp, ge=0)
    foot_kd: float = Field(_G.foot_kd, ge=0)
    tension_cap: float = Field(_G.tension_cap, gt=0)
    slew_rate: float = Field(_G.slew_rate, ge=0)
    nominal_stance_time: float = Field(_G.nominal_stance_time, gt=0)
    reach_fraction: float = Field(_G.reach_fraction, gt=0, le=1)
    hysteresis: int = Field(_G.hysteresis, ge=1)
    clearance: float = Field(_G.clearance, ge=0)

    def build(self) -> HopperGains:
        return HopperGains(**self.model_dump())


class HopperSpec(Strict):
    gains: GainsSpec = Field(default_factory=GainsSpec)
    duration: float = Field(3.0, gt=0)
    start_height: float | None = Field(None, gt=0)


class BeltSpec(Strict):
    """Test-stand belts: pitch and fore-aft springs, optional one-sided lift."""

    pitch_stiffness: float = Field(300.0, ge=0)
    pitch_damping: float = Field(30.0, ge=0)
    x_stiffness: float = Field(2000.0, ge=0)
    x_damping: float = Field(200.0, ge=0)
    support: bool = True
    support_stiffness: float = Field(2e4, ge=0)
    support_damping: float = Field(1e3, ge=0)

    def build(self) -> BeltRig:
        d = self.model_dump()
        support = d.pop("support")
        # the support height is fixed from the start pose by the scenario
        return BeltRig(**d, support_height=None if support else -np.inf)


class LegJumpSpec(Strict):
    torques: tuple[float, float, float] = (9.6, 19.2, 1.4)
    tension_cap: float = Field(145.0, gt=0)
    start: float = Field(0.2, ge=0)
    push_duration: float = Field(0.3, gt=0)
    pretension: float = Field(10.0, ge=0)
    posture_deg: tuple[float, float, float] = (-50.0, -130.0, 0.0)
    torso_pitch_deg: float = 20.0
    belt: BeltSpec = Field(default_factory=BeltSpec)
    hold_kp: float = Field(60.0, ge=0)
    hold_kd: float = Field(3.0, ge=0)
    duration: float = Field(1.0, gt=0)


class CombinedSpec(Strict):
    torques: tuple[float, float, float] = (9.0, 18.0, 2.0)
    tension_cap: float = Field(145.0, gt=0)
    start: float = Field(0.5, ge=0)
    push_duration: float = Field(0.3, gt=0)
    pretension: float = Field(10.0, ge=0)
    # (time, upper, lower) tail tension steps
    tail_schedule: list[tuple[float, float, float]] = [(0.0, 40.0, 30.0), (0.5, 25.0, 25.0), (1.5, 15.0, 15.0)]
    posture_deg: tuple[float, float, float] = (-45.0, -135.0, 0.0)
    torso_pitch_deg: float = 30.0
    belt: BeltSpec = Field(default_factory=lambda: BeltSpec(pitch_stiffness=150.0, pitch_damping=15.0,
                                                            x_stiffness=500.0, x_damping=100.0, support=False))
    hold_kp: float = Field(60.0, ge=0)
    hold_kd: float = Field(3.0, ge=0)
    duration: float = Field(2.5, gt=0)

    @field_validator("tail_schedule")
    @classmethod
    def _schedule(cls, v):
        if not v:
            raise ValueError("needs at least one step")
        times = [s[0] for s in v]
        if times != sorted(times):
            raise ValueError("step times must be increasing")
        if min(min(s[1], s[2]) for s in v) < 0:
            raise ValueError("tensions must be >= 0")
        return v


class RobotConfig(Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    gravity: float = Field(9.81, ge=0)
    seed: int = 0
    analysis: AnalysisSpec = Field(default_factory=AnalysisSpec)
    tail: TailSpec = Field(default_factory=TailSpec)
    tail_run: TailRunSpec = Field(default_factory=TailRunSpec)
    body: BodySpec = Field(default_factory=BodySpec)
    leg_muscles: LegMusclesSpec = Field(default_factory=LegMusclesSpec)
    contact: ContactSpec = Field(default_factory=ContactSpec)
    sim: SimSpec = Field(default_factory=SimSpec)
    hopper: HopperSpec = Field(default_factory=HopperSpec)
    leg_jump: LegJumpSpec = Field(default_factory=LegJumpSpec)
    combined: CombinedSpec = Field(default_factory=CombinedSpec)

    @model_validator(mode="after")
    def _cross_checks(self):
        for name in ("f_upper", "f_lower"):
            if getattr(self.tail_run, name) > self.tail.f_max:
                raise ValueError(f"tail_run.{name} exceeds tail.f_max")
        for _, fu, fl in self.combined.tail_schedule:
            if max(fu, fl) > self.tail.f_max:
                raise ValueError("combined.tail_schedule tension exceeds tail.f_max")
        f_max = self.leg_muscles.f_max
        if self.hopper.gains.tension_cap > f_max:
            raise ValueError("hopper.gains.tension_cap exceeds leg_muscles.f_max")
        for sec in ("leg_jump", "combined"):
            if getattr(self, sec).tension_cap > f_max:
                raise ValueError(f"{sec}.tension_cap exceeds leg_muscles.f_max")
        return self


# -- loading -------------------------------------------------------------------

def _format_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def config_from_dict(data: dict | None) -> RobotConfig:
    try:
        return RobotConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None


def load_config(path: str | Path | None = None) -> RobotConfig:
    """Read a YAML config; ``None`` loads the packaged default."""
    if path is None:
        text = resources.files("kangaroo").joinpath("data", "default.yaml").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("<root>: config must be a mapping")
    return config_from_dict(data)


def effective_config(cfg: RobotConfig) -> dict:
    return json.loads(cfg.model_dump_json())


def dump_config(cfg: RobotConfig) -> str:
    return yaml.safe_dump(effective_config(cfg), sort_keys=False, default_flow_style=None)


def config_hash(cfg: RobotConfig) -> str:
    blob = json.dumps(effective_config(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- builders --------------------------------------------------------------------

def analysis_setup(cfg: RobotConfig):
    """``(model, routing, leap params, posture joint angles, tail attachment)``."""
    a = cfg.analysis
    model = ChainModel(tuple(l.build() for l in a.links), gravity=cfg.gravity)
    routing = MuscleRouting(tuple(m.build() for m in a.muscles))
    routing.validate(model)
    absolute = np.deg2rad(a.posture_deg)
    posture = np.diff(absolute, prepend=0.0)
    return model, routing, a.leap.build(cfg.gravity), posture, np.array(a.tail_attachment)


def leg_arms(cfg: RobotConfig) -> tuple:
    m = cfg.leg_muscles
    return tuple(tuple(a) for a in m.arms), tuple(m.names), m.f_max


def hop_settings(cfg: RobotConfig) -> HopSettings:
    arms, names, f_max = leg_arms(cfg)
    h = cfg.hopper
    return HopSettings(h.gains.build(), arms, names, f_max, h.duration, h.start_height)


def leg_jump_settings(cfg: RobotConfig) -> LegJumpSettings:
    arms, names, f_max = leg_arms(cfg)
    j = cfg.leg_jump
    cmd = LegCommand(j.torques, j.tension_cap, j.start, j.push_duration, j.pretension)
    return LegJumpSettings(arms, names, f_max, cmd, j.posture_deg, j.torso_pitch_deg, j.belt.build(), j.hold_kp,
                           j.hold_kd, j.duration)


def combined_settings(cfg: RobotConfig) -> CombinedSettings:
    arms, names, f_max = leg_arms(cfg)
    c = cfg.combined
    legs = LegCommand(c.torques, c.tension_cap, c.start, c.push_duration, c.pretension)
    tail = TailCommand(tuple(tuple(s) for s in c.tail_schedule))
    return CombinedSettings(arms, names, f_max, legs, tail, c.posture_deg, c.torso_pitch_deg, c.belt.build(),
                            c.hold_kp, c.hold_kd, c.duration, cfg.tail.build(cfg.gravity))
