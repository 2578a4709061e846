"""Exploration trial: open, approach, stabilise, squeeze, wrap.

One trial drives the compiled simulation phase by phase and records the
encoder and tactile blocks that make up a feature vector. In ``full`` mode
the stable-grasp model supplies the stabilisation targets; in ``benchmark``
mode the targets are frozen at their first-contact values.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .catalog import default_catalog
from .config import DEFAULT_CONFIG, WorkbenchConfig
from .control import TRACE_HEADER
from .grasp_model import Gmm, fit_gmm, generate_demonstrations, regress
from .handsim import ObjectSpec, joint_limits, motor_params, pack_geometry, sample_initial_pose
from .tactile import spread_matrix, tactile_params

FULL = "full"
BENCHMARK = "benchmark"
MODES = (FULL, BENCHMARK)

COMPLETED = "completed"
DROPPED = "dropped"
TIMEOUT = "timeout"

TRACE_DTYPE_COLS = len(TRACE_HEADER)


@dataclass(frozen=True)
class TrialConfig:
    grip_init: float = 0.5
    grip_squeeze: float = 1.5
    threshold: float = 0.1  # contact detection, N
    touch_force: float = 0.15  # force held by a finger that touched first
    dwell: float = 3.0
    tolerance: float = 0.02  # rad
    hold: float = 0.3  # s the tolerance must hold
    np_tolerance: float = 0.02  # rad, non-proximal tracking during stabilisation
    timeout: float = 6.0  # s per phase
    mode: str = FULL
    seed: int = 0
    v_approach: float = 1.0
    v_wrap: float = 3.0
    handover: float = 0.9  # fraction of grip_init each finger must bear before the operator lets go
    query_interval: float = 0.02  # s between stable-grasp model queries
    diag_window: float = 0.5  # s at the end of the dwell used for regulation checks

    def __post_init__(self):
        if not self.grip_squeeze > self.grip_init > 0:
            raise ValueError("grips must satisfy grip_squeeze > grip_init > 0")
        if not self.timeout > 0 or not self.dwell > 0:
            raise ValueError("timeout and dwell must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class TrialRecord:
    object_id: str
    outcome: str
    initial_pose: np.ndarray
    theta_init: np.ndarray | None = None  # 6 grasp joints after stabilisation
    theta_fin: np.ndarray | None = None  # 6 grasp joints at the end of the dwell
    theta_wrap: np.ndarray | None = None  # 9 wrap joints at contact
    tau: np.ndarray | None = None  # 24 taxel pressures, thumb then middle
    alpha_ref: float = math.nan
    alpha_contact: float = math.nan
    grip_error: float = math.nan  # max relative |g - g_ref| over the diagnostic window
    alpha_error: float = math.nan  # max |alpha - alpha_ref| over the diagnostic window
    phase_times: dict = field(default_factory=dict)
    trace: np.ndarray | None = None

    @property
    def completed(self) -> bool:
        return self.outcome == COMPLETED


def reachable_targets(non_proximal, hand) -> np.ndarray:
    """Clip predicted non-proximal angles to the grasp fingers' joint limits.

    Regression outside the demonstrated distances (a soft object squashed
    below the smallest width) can ask for angles no joint can reach, which
    would keep the tracking check from ever settling.
    """
    lo = [v for f in hand.fingers[:2] for v in f.lower[1:]]
    hi = [v for f in hand.fingers[:2] for v in f.upper[1:]]
    return np.clip(np.asarray(non_proximal, dtype=float), lo, hi)


def benchmark_targets(alpha_at_contact: float, joints_at_contact: np.ndarray) -> tuple[float, np.ndarray]:
    """Stabilisation targets with the stable-grasp model switched off."""
    j = np.asarray(joints_at_contact, dtype=float)
    return alpha_at_contact, j[[1, 2, 4, 5]].copy()


def _control_params(tc: TrialConfig, wc: WorkbenchConfig) -> np.ndarray:
    c = wc.control
    p = np.zeros(kern.CTLP_SIZE)
    p[kern.C_FKP], p[kern.C_FKI], p[kern.C_FKD], p[kern.C_FINT] = (
        c.force_kp, c.force_ki, c.force_kd, c.force_int_clamp)
    p[kern.C_AKP], p[kern.C_AKI], p[kern.C_AKD] = c.alpha_kp, c.alpha_ki, c.alpha_kd
    p[kern.C_AOUT], p[kern.C_AINT], p[kern.C_FMIN] = c.alpha_out_clamp, c.alpha_int_clamp, c.f_min
    p[kern.C_THR], p[kern.C_FTOUCH] = tc.threshold, tc.touch_force
    p[kern.C_VAPP], p[kern.C_VWRAP] = tc.v_approach, tc.v_wrap
    p[kern.C_TOL] = tc.tolerance
    p[kern.C_HOLD] = round(tc.hold / wc.hand.dt)
    p[kern.C_HANDOVER] = tc.handover
    p[kern.C_NPTOL] = tc.np_tolerance
    return p


class _Sim:
    """Packed simulation state of one trial."""

    def __init__(self, spec: ObjectSpec, tc: TrialConfig, wc: WorkbenchConfig, rng, pose):
        self.rng = rng
        self.dt = wc.hand.dt
        self.geom = pack_geometry(wc.hand)
        self.planes, self.objp = spec.packed()
        self.beta = wc.tactile.taxel_angles()
        self.tprm = tactile_params(wc.tactile)
        self.spread = spread_matrix(spec.stiffness, wc.tactile)
        self.prm = motor_params(wc.hand)
        self.ctlp = _control_params(tc, wc)
        self.joints = joint_limits(wc.hand)[0].copy()
        self.pose = pose.pose()
        self.flags = np.array([1.0 if pose.held else 0.0, 0.0])
        self.ctl = np.zeros(kern.CTL_SIZE)
        self.warm = np.full(5, np.nan)
        self.last_p = np.zeros((5, kern.N_TAX))
        self.t = 0.0
        self.rows: list[np.ndarray] = []

    def run(self, phase, n, g_ref, a_ref, np_ref):
        noise = self.rng.standard_normal((n, 5, kern.N_TAX))
        trace = np.zeros((n, kern.TRACE_COLS))
        done, event = kern.run_chunk(phase, n, self.t, self.joints, self.pose, self.flags, self.geom,
                                     self.planes, self.objp, self.beta, self.tprm, self.spread, self.prm,
                                     self.ctlp, g_ref, a_ref, np.asarray(np_ref, dtype=float), self.ctl,
                                     noise, trace, self.last_p, self.warm)
        # on a detection event the row of the detecting step is valid but not integrated
        rows = done + 1 if (event == kern.EV_DONE and phase in (kern.PH_APPROACH, kern.PH_WRAP)) else done
        self.rows.append(trace[:min(rows, n)])
        self.t += done * self.dt
        return done, event

    def last_row(self):
        for r in reversed(self.rows):
            if len(r):
                return r[-1]
        raise RuntimeError("no simulation step recorded yet")


def run_trial(spec: ObjectSpec, cfg: TrialConfig, rng: np.random.Generator, gmm: Gmm | None = None,
              wcfg: WorkbenchConfig = DEFAULT_CONFIG, keep_trace: bool = False) -> TrialRecord:
    """Execute one exploration trial on ``spec``; deterministic given the rng state."""
    if cfg.mode == FULL and gmm is None:
        raise ValueError("full mode needs a stable-grasp model")
    pose0 = sample_initial_pose(spec, rng, wcfg)
    sim = _Sim(spec, cfg, wcfg, rng, pose0)
    rec = TrialRecord(spec.id, TIMEOUT, pose0.pose())
    max_steps = int(round(cfg.timeout / sim.dt))
    chunk = max(1, int(round(cfg.query_interval / sim.dt)))

    def finish(outcome):
        rec.outcome = outcome
        if keep_trace:
            rec.trace = np.concatenate(sim.rows) if sim.rows else np.zeros((0, kern.TRACE_COLS))
        return rec

    # 1-2: open hand, close thumb and middle until both touch
    done, event = sim.run(kern.PH_APPROACH, max_steps, cfg.grip_init, 0.0, np.zeros(4))
    rec.phase_times["approach"] = sim.t
    if event != kern.EV_DONE:
        return finish(TIMEOUT)
    contact = sim.last_row()
    rec.alpha_contact = float(contact[kern.TR_ALPHA])

    # 3: stabilise at the initial grip
    if cfg.mode == BENCHMARK:
        a_ref, np_ref = benchmark_targets(rec.alpha_contact, sim.joints)
    else:
        target = regress(gmm, float(contact[kern.TR_D]))
        a_ref, np_ref = target.alpha, reachable_targets(target.non_proximal, wcfg.hand)
    steps = 0
    event = kern.EV_NONE
    while steps < max_steps:
        n = min(chunk, max_steps - steps)
        done, event = sim.run(kern.PH_STABILIZE, n, cfg.grip_init, a_ref, np_ref)
        steps += done
        if event != kern.EV_NONE:
            break
        if cfg.mode == FULL:
            target = regress(gmm, float(sim.last_row()[kern.TR_D]))
            a_ref, np_ref = target.alpha, reachable_targets(target.non_proximal, wcfg.hand)
    rec.phase_times["stabilize"] = sim.t
    rec.alpha_ref = float(a_ref)
    if event == kern.EV_DROP:
        return finish(DROPPED)
    if event != kern.EV_DONE:
        return finish(TIMEOUT)
    rec.theta_init = sim.joints[:6].copy()

    # 4: squeeze and dwell
    n_dwell = int(round(cfg.dwell / sim.dt))
    first = len(sim.rows)
    done, event = sim.run(kern.PH_SQUEEZE, n_dwell, cfg.grip_squeeze, a_ref, np_ref)
    rec.phase_times["squeeze"] = sim.t
    if event == kern.EV_DROP:
        return finish(DROPPED)
    window = np.concatenate(sim.rows[first:])[-int(round(cfg.diag_window / sim.dt)):]
    rec.grip_error = float(np.max(np.abs(window[:, kern.TR_G] - window[:, kern.TR_GREF]) / window[:, kern.TR_GREF]))
    rec.alpha_error = float(np.max(np.abs(window[:, kern.TR_ALPHA] - window[:, kern.TR_AREF])))
    rec.theta_fin = sim.joints[:6].copy()
    rec.tau = sim.last_p[:2].ravel().copy()

    # 5: wrap the remaining fingers
    done, event = sim.run(kern.PH_WRAP, max_steps, cfg.grip_squeeze, a_ref, np_ref)
    rec.phase_times["wrap"] = sim.t
    if event == kern.EV_DROP:
        return finish(DROPPED)
    if event != kern.EV_DONE:
        return finish(TIMEOUT)
    rec.theta_wrap = sim.ctl[kern.S_WRAP_REC:kern.S_WRAP_REC + 9].copy()

    # encoders are read with noise; the controller itself used exact joint angles
    sigma = wcfg.hand.encoder_noise
    if sigma > 0:
        rec.theta_init = rec.theta_init + sigma * rng.standard_normal(6)
        rec.theta_fin = rec.theta_fin + sigma * rng.standard_normal(6)
        rec.theta_wrap = rec.theta_wrap + sigma * rng.standard_normal(9)
    return finish(COMPLETED)


def trial_seed(master: int, object_index: int, trial: int, attempt: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, object_index, trial, attempt])


def run_with_retries(spec: ObjectSpec, index: int, trial: int, cfg: TrialConfig, gmm: Gmm | None,
                     wcfg: WorkbenchConfig = DEFAULT_CONFIG, attempts: int = 3) -> tuple[TrialRecord, int]:
    """Run a trial, re-running failures with fresh derived seeds; returns (record, attempts used)."""
    rec = None
    for attempt in range(attempts):
        rng = np.random.default_rng(trial_seed(cfg.seed, index, trial, attempt))
        rec = run_trial(spec, cfg, rng, gmm, wcfg)
        if rec.completed:
            return rec, attempt + 1
    return rec, attempts


DEMO_COUNT = 120
DEMO_NOISE = 0.01


def catalog_width_range(catalog=None) -> tuple[float, float]:
    catalog = default_catalog() if catalog is None else catalog
    widths = [2 * o.sections[0].a for o in catalog]
    return min(widths) - 4.0, max(widths) + 6.0


@functools.lru_cache(maxsize=8)
def default_grasp_model(seed: int = 0, k: int = 3, wcfg: WorkbenchConfig = DEFAULT_CONFIG) -> Gmm:
    """Stable-grasp model fitted to synthetic demonstrations over the catalog's width range."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        demos = generate_demonstrations(DEMO_COUNT, catalog_width_range(), rng, wcfg, noise=DEMO_NOISE,
                                        n_components=k)
    return fit_gmm(demos.matrix(), k, seed)
