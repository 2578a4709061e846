"""Workbench configuration: hand geometry, motor, tactile and controller constants.

All values live in one versioned text file (INI body after a ``schema=`` line).
Lengths are millimetres, angles radians, forces N-equivalent, time seconds.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CONFIG_SCHEMA = "haptic-workbench-config/1"

FINGERS = ("thumb", "middle", "index", "ring", "little")
THUMB, MIDDLE, INDEX, RING, LITTLE = range(5)
GRASP_FINGERS = (THUMB, MIDDLE)
WRAP_FINGERS = (INDEX, RING, LITTLE)
N_TAXELS = 12


@dataclass(frozen=True)
class FingerGeometry:
    base: tuple[float, float]
    base_angle: float  # direction of the straight finger, radians
    flex_sign: int  # +1: flexion is counter-clockwise in the hand plane
    links: tuple[float, float, float]
    lower: tuple[float, float, float]
    upper: tuple[float, float, float]
    # non-proximal joints follow c * (proximal - lower_proximal) while closing
    coupling: tuple[float, float]
    plane: int  # contact plane index into the object's cross-sections


def _default_fingers() -> tuple[FingerGeometry, ...]:
    lo = (-0.30, 0.0, 0.0)
    hi = (1.50, 1.60, 1.40)
    return (
        FingerGeometry((-45.0, 0.0), np.pi / 2, -1, (36.0, 26.0, 20.0), lo, hi, (0.70, 0.50), 0),
        FingerGeometry((45.0, 0.0), np.pi / 2, 1, (44.0, 30.0, 22.0), lo, hi, (0.80, 0.60), 0),
        FingerGeometry((44.0, 0.0), np.pi / 2, 1, (48.0, 32.0, 24.0), lo, hi, (0.60, 0.40), 1),
        FingerGeometry((44.0, 0.0), np.pi / 2, 1, (48.0, 32.0, 24.0), lo, hi, (0.60, 0.40), 2),
        FingerGeometry((40.0, 0.0), np.pi / 2, 1, (46.0, 30.0, 22.0), lo, hi, (0.50, 0.30), 3),
    )


@dataclass(frozen=True)
class HandConfig:
    fingers: tuple[FingerGeometry, ...] = field(default_factory=_default_fingers)
    tip_radius: float = 8.0
    # out-of-plane offsets (mm) of the grasp plane and the three wrap planes
    plane_offsets: tuple[float, float, float, float] = (0.0, 20.0, -20.0, -38.0)
    dt: float = 1e-3
    k_v: float = 0.5  # rad/s per volt
    k_r: float = 0.008  # rad/s per N*mm of contact torque
    v_max: float = 12.0
    np_rate: float = 1.0  # rad/s rate limit of position-controlled joints
    object_b_trans: float = 0.05  # N*s/mm
    object_b_rot: float = 10.0  # N*mm*s/rad
    pose_dx: float = 12.0
    pose_dy: float = 8.0
    pose_dphi: float = 0.15
    encoder_noise: float = 0.004  # rad, applied to recorded encoder values


@dataclass(frozen=True)
class TactileConfig:
    first_angle: float = -75.0  # degrees, fan angle of taxel 0 relative to the pad normal
    pitch: float = 15.0  # degrees between neighbouring taxels
    window: float = 15.0  # degrees, half-width of a taxel's triangular receptive field
    gain: float = 1.0  # pressure units per N/mm * mm
    r_max: float = 6.0
    scale: float = 1.0  # N per pressure unit
    noise_sigma: float = 0.004
    spread_ref: float = 8.0  # degrees of spread at k = spread_k_ref
    spread_k_ref: float = 1.0

    @property
    def central_taxel(self) -> int:
        return int(round(-self.first_angle / self.pitch))

    def taxel_angles(self) -> np.ndarray:
        return np.deg2rad(self.first_angle + self.pitch * np.arange(N_TAXELS))


@dataclass(frozen=True)
class ControlConfig:
    force_kp: float = 2.0
    force_ki: float = 40.0
    force_kd: float = 0.0
    force_int_clamp: float = 0.3
    # the object moves toward B when the thumb pushes harder, so the
    # position loop needs negative gains to close with f_th = g + u/2
    alpha_kp: float = -8.0
    alpha_ki: float = -6.0
    alpha_kd: float = 0.0
    alpha_out_clamp: float = 2.0
    alpha_int_clamp: float = 0.2
    f_min: float = 0.05


@dataclass(frozen=True)
class WorkbenchConfig:
    hand: HandConfig = field(default_factory=HandConfig)
    tactile: TactileConfig = field(default_factory=TactileConfig)
    control: ControlConfig = field(default_factory=ControlConfig)


DEFAULT_CONFIG = WorkbenchConfig()


def _fmt(value) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: WorkbenchConfig) -> str:
    parser = configparser.ConfigParser()
    hand = dataclasses.asdict(cfg.hand)
    fingers = hand.pop("fingers")
    parser["hand"] = {k: _fmt(v) for k, v in hand.items()}
    for name, finger in zip(FINGERS, fingers):
        parser[f"finger.{name}"] = {k: _fmt(v) for k, v in finger.items()}
    parser["tactile"] = {k: _fmt(v) for k, v in dataclasses.asdict(cfg.tactile).items()}
    parser["control"] = {k: _fmt(v) for k, v in dataclasses.asdict(cfg.control).items()}
    buf = io.StringIO()
    parser.write(buf)
    return f"schema={CONFIG_SCHEMA}\n" + buf.getvalue()


def _coerce(template, text: str):
    if isinstance(template, tuple):
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != len(template):
            raise ValueError(f"expected {len(template)} values, got {text!r}")
        return tuple(_coerce(t, p) for t, p in zip(template, parts))
    if isinstance(template, bool):
        return text.strip().lower() in ("1", "true", "yes")
    if isinstance(template, int):
        return int(text)
    return float(text)


def _section(parser, name, default):
    if not parser.has_section(name):
        return default
    updates = {}
    for key, text in parser[name].items():
        if not hasattr(default, key):
            raise ValueError(f"unknown config key [{name}] {key}")
        updates[key] = _coerce(getattr(default, key), text)
    return dataclasses.replace(default, **updates)


def parse_config(text: str) -> WorkbenchConfig:
    first, _, body = text.partition("\n")
    if first.strip() != f"schema={CONFIG_SCHEMA}":
        raise ValueError(f"unsupported config schema line {first!r}")
    parser = configparser.ConfigParser()
    parser.read_string(body)
    base = DEFAULT_CONFIG
    fingers = tuple(
        _section(parser, f"finger.{name}", f) for name, f in zip(FINGERS, base.hand.fingers)
    )
    hand = _section(parser, "hand", dataclasses.replace(base.hand, fingers=fingers))
    return WorkbenchConfig(
        hand=hand,
        tactile=_section(parser, "tactile", base.tactile),
        control=_section(parser, "control", base.control),
    )


def load_config(path: str | Path | None) -> WorkbenchConfig:
    if path is None:
        return DEFAULT_CONFIG
    return parse_config(Path(path).read_text())


def config_hash(cfg: WorkbenchConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:16]
