"""Grasp force control: per-finger force loops and the grip/object-position loop."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _kernels as kern
from .config import DEFAULT_CONFIG, ControlConfig, HandConfig
from .handsim import DomainError, MotorCommand


@dataclass(frozen=True)
class PidController:
    kp: float
    ki: float
    kd: float
    out_clamp: float
    int_clamp: float
    integral: float = 0.0
    prev_error: float = 0.0
    has_prev: bool = False

    def reset(self) -> "PidController":
        return replace(self, integral=0.0, prev_error=0.0, has_prev=False)


def force_pid(cfg: ControlConfig = DEFAULT_CONFIG.control,
              hand: HandConfig = DEFAULT_CONFIG.hand) -> PidController:
    return PidController(cfg.force_kp, cfg.force_ki, cfg.force_kd, hand.v_max, cfg.force_int_clamp)


def position_pid(cfg: ControlConfig = DEFAULT_CONFIG.control) -> PidController:
    return PidController(cfg.alpha_kp, cfg.alpha_ki, cfg.alpha_kd, cfg.alpha_out_clamp, cfg.alpha_int_clamp)


def pid_step(c: PidController, error: float, dt: float) -> tuple[float, PidController]:
    """u = kp*e + ki*integral(e) + kd*de/dt, integral and output clamped.

    The derivative term is zero on the first call.
    """
    if not dt > 0:
        raise DomainError("dt must be positive")
    u, integral, prev = kern.pid_update(c.kp, c.ki, c.kd, c.out_clamp, c.int_clamp,
                                        c.integral, c.prev_error, c.has_prev, float(error), dt)
    return u, replace(c, integral=integral, prev_error=prev, has_prev=True)


@dataclass(frozen=True)
class GraspFrame:
    """Anchor points at the thumb base (A) and the middle-finger base (B)."""

    a: tuple[float, float]
    b: tuple[float, float]

    @property
    def origin(self) -> tuple[float, float]:
        return (0.5 * (self.a[0] + self.b[0]), 0.5 * (self.a[1] + self.b[1]))

    @classmethod
    def from_hand(cls, hand: HandConfig = DEFAULT_CONFIG.hand) -> "GraspFrame":
        return cls(tuple(hand.fingers[0].base), tuple(hand.fingers[1].base))


@dataclass(frozen=True)
class ForceSetpoints:
    thumb: float
    middle: float


def grip_strength(f_th: float, f_mid: float) -> float:
    if f_th < 0 or f_mid < 0:
        raise DomainError("contact force magnitudes must be non-negative")
    return (f_th + f_mid) / 2


def object_position(contact_th, contact_mid, frame: GraspFrame) -> float:
    """Unsigned angle in [0, pi] between O->C and O->B, C the contact midpoint."""
    alpha = kern.alpha_angle(float(contact_th[0]), float(contact_th[1]),
                             float(contact_mid[0]), float(contact_mid[1]),
                             float(frame.a[0]), float(frame.a[1]),
                             float(frame.b[0]), float(frame.b[1]))
    if math.isnan(alpha):
        raise DomainError("contact midpoint coincides with the frame origin")
    return alpha


def fingertip_distance(tip_th, tip_mid) -> float:
    return float(math.hypot(tip_th[0] - tip_mid[0], tip_th[1] - tip_mid[1]))


def high_level_step(alpha_meas: float, alpha_ref: float, grip_ref: float, pid: PidController,
                    dt: float = DEFAULT_CONFIG.hand.dt,
                    f_min: float = DEFAULT_CONFIG.control.f_min) -> tuple[ForceSetpoints, PidController]:
    """Differential force allocation around the reference grip strength."""
    if not grip_ref > 0:
        raise DomainError("reference grip strength must be positive")
    u, pid = pid_step(pid, alpha_ref - alpha_meas, dt)
    th, mid = kern.allocate(grip_ref, u, f_min)
    return ForceSetpoints(th, mid), pid


def low_level_step(f_meas, f_ref, pids, dt: float = DEFAULT_CONFIG.hand.dt,
                   v_max: float = DEFAULT_CONFIG.hand.v_max) -> tuple[MotorCommand, list[PidController]]:
    """One force PID per finger; returns a command for all five proximal joints.

    ``f_meas``, ``f_ref`` and ``pids`` are parallel sequences for the driven
    fingers, in finger order starting at the thumb. Remaining fingers get 0 V.
    """
    if any(r < 0 for r in f_ref):
        raise DomainError("force setpoints must be non-negative")
    volts = np.zeros(5)
    new = []
    for i, (fa, fr, pid) in enumerate(zip(f_meas, f_ref, pids)):
        volts[i], p = pid_step(pid, fr - fa, dt)
        new.append(p)
    return MotorCommand(volts, v_max), new


TRACE_HEADER = ("t", "phase", "f_th", "f_mid", "f_th_ref", "f_mid_ref", "alpha", "alpha_ref",
                "g", "g_ref", "v_th", "v_mid", "held", "d")


def write_trace_csv(trace: np.ndarray, path: str | Path) -> None:
    """Dump a controller trace (rows of TRACE_HEADER columns) as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["schema=haptic-trace/1"])
        w.writerow(TRACE_HEADER)
        for row in trace:
            w.writerow([repr(float(v)) for v in row])
