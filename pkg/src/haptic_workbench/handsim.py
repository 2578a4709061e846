"""Planar five-finger hand contacting compliant superellipse objects.

The thumb and middle finger oppose each other in the grasp plane; index, ring
and little finger close in three parallel wrap planes. Every finger has three
independent joints [proximal, mid, distal]; proximal joints are voltage driven,
the other two follow position targets under a rate limit.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as kern
from .config import DEFAULT_CONFIG, FINGERS, N_TAXELS, HandConfig, WorkbenchConfig

N_JOINTS = 15


class DomainError(ValueError):
    """Input outside the domain of an operation."""


# --------------------------------------------------------------------------
# packing helpers


def pack_geometry(hand: HandConfig) -> np.ndarray:
    geom = np.zeros((5, kern.GEOM_COLS))
    for f, fg in enumerate(hand.fingers):
        geom[f, kern.G_BX:kern.G_BY + 1] = fg.base
        geom[f, kern.G_PSI] = fg.base_angle
        geom[f, kern.G_SIGN] = fg.flex_sign
        geom[f, kern.G_L:kern.G_L + 3] = fg.links
        geom[f, kern.G_LO:kern.G_LO + 3] = fg.lower
        geom[f, kern.G_HI:kern.G_HI + 3] = fg.upper
        geom[f, kern.G_C:kern.G_C + 2] = fg.coupling
        geom[f, kern.G_PLANE] = fg.plane
        geom[f, kern.G_R] = hand.tip_radius
    return geom


def motor_params(hand: HandConfig) -> np.ndarray:
    return np.array([hand.dt, hand.k_v, hand.k_r, hand.v_max, hand.np_rate,
                     hand.object_b_trans, hand.object_b_rot])


def joint_limits(hand: HandConfig = DEFAULT_CONFIG.hand) -> tuple[np.ndarray, np.ndarray]:
    lo = np.concatenate([f.lower for f in hand.fingers])
    hi = np.concatenate([f.upper for f in hand.fingers])
    return lo, hi


# --------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class JointVector:
    """Fifteen joint angles, [proximal, mid, distal] per finger in FINGERS order."""

    angles: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float)
        if a.shape != (N_JOINTS,):
            raise DomainError(f"joint vector must have {N_JOINTS} entries, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError("joint vector contains non-finite values")
        object.__setattr__(self, "angles", a)

    @classmethod
    def from_angles(cls, angles, hand: HandConfig = DEFAULT_CONFIG.hand) -> "JointVector":
        lo, hi = joint_limits(hand)
        return cls(np.asarray(angles, dtype=float), lo, hi)

    @classmethod
    def open_hand(cls, hand: HandConfig = DEFAULT_CONFIG.hand) -> "JointVector":
        lo, hi = joint_limits(hand)
        return cls(lo.copy(), lo, hi)

    def within_limits(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.angles >= self.lower - tol) and np.all(self.angles <= self.upper + tol))

    def finger(self, f: int) -> np.ndarray:
        return self.angles[3 * f:3 * f + 3]

    def clamped(self) -> "JointVector":
        return replace(self, angles=np.clip(self.angles, self.lower, self.upper))


@dataclass(frozen=True)
class MotorCommand:
    """Proximal-joint voltages plus position targets for the non-proximal joints.

    Voltages are saturated to +-v_max at construction. ``np_targets`` is (5, 2);
    None keeps every non-proximal joint where it is.
    """

    voltages: np.ndarray
    v_max: float = DEFAULT_CONFIG.hand.v_max
    np_targets: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.voltages, dtype=float)
        if v.shape != (5,):
            raise DomainError("one voltage per finger is required")
        if np.any(np.isnan(v)):
            raise DomainError("NaN voltage")
        object.__setattr__(self, "voltages", np.clip(v, -self.v_max, self.v_max))
        if self.np_targets is not None:
            t = np.asarray(self.np_targets, dtype=float).reshape(5, 2)
            if np.any(np.isnan(t)):
                raise DomainError("NaN position target")
            object.__setattr__(self, "np_targets", t)


@dataclass(frozen=True)
class CrossSection:
    """Superellipse |x/a|^p + |y/b|^p = 1 in one contact plane (mm)."""

    a: float
    b: float
    p: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise DomainError("superellipse semi-axes must be positive")
        if self.p < 1:
            raise DomainError("superellipse exponent must be >= 1")


@dataclass(frozen=True)
class ObjectSpec:
    """A compliant test object.

    ``sections`` holds the grasp plane followed by the index, ring and little
    wrap planes; None marks a plane the object does not reach.
    """

    id: str
    name: str
    stiffness: float  # N/mm
    friction: float
    sections: tuple[CrossSection | None, CrossSection | None, CrossSection | None, CrossSection | None]
    load: float  # N needed to hold against gravity
    tag: str = "supplemental"

    def __post_init__(self):
        if not self.stiffness > 0:
            raise DomainError("stiffness must be positive")
        if not 0 < self.friction <= 2:
            raise DomainError("friction coefficient must lie in (0, 2]")
        if len(self.sections) != 4 or self.sections[0] is None:
            raise DomainError("four sections required and the grasp plane must be present")
        if self.load < 0:
            raise DomainError("load must be non-negative")

    def packed(self) -> tuple[np.ndarray, np.ndarray]:
        planes = np.zeros((4, 3))
        for i, s in enumerate(self.sections):
            if s is not None:
                planes[i] = (s.a, s.b, s.p)
        return planes, np.array([self.stiffness, self.friction, self.load])


@dataclass(frozen=True)
class ObjectState:
    """Object pose in the hand frame.

    ``held`` marks the object as still supported by the operator who presents
    it; the slip test only applies once the fingers have taken it over.
    """

    x: float
    y: float
    phi: float
    dropped: bool = False
    held: bool = False

    def __post_init__(self):
        if not self.dropped and not np.all(np.isfinite([self.x, self.y, self.phi])):
            raise DomainError("object pose must be finite")

    def pose(self) -> np.ndarray:
        return np.array([self.x, self.y, self.phi])


@dataclass(frozen=True)
class SimState:
    joints: JointVector
    obj: ObjectState
    time: float = 0.0


@dataclass
class ContactSet:
    """Per-finger taxel penetrations (mm), surface points and outward taxel normals.

    The normals point from the fingertip into the object.
    """

    depth: np.ndarray = field(default_factory=lambda: np.zeros((5, N_TAXELS)))
    points: np.ndarray = field(default_factory=lambda: np.zeros((5, N_TAXELS, 2)))
    normals: np.ndarray = field(default_factory=lambda: np.zeros((5, N_TAXELS, 2)))

    def in_contact(self, f: int) -> bool:
        return bool(np.any(self.depth[f] > 0))


# --------------------------------------------------------------------------
# operations


def _checked(joints: JointVector) -> np.ndarray:
    if not joints.within_limits(1e-12):
        raise DomainError("joint vector outside its limits")
    return joints.angles


def forward_kinematics(joints: JointVector, cfg: WorkbenchConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Fingertip centre and tip-frame angle per finger, shape (5, 3)."""
    angles = _checked(joints)
    geom = pack_geometry(cfg.hand)
    out = np.zeros((5, 3))
    pts = np.zeros((4, 2))
    for f in range(5):
        psi = kern.fk_finger(geom, f, angles, pts)
        out[f] = (pts[3, 0], pts[3, 1], psi)
    return out


def open_hand_tips(cfg: WorkbenchConfig = DEFAULT_CONFIG) -> np.ndarray:
    return forward_kinematics(JointVector.open_hand(cfg.hand), cfg)


def tip_distance_open(cfg: WorkbenchConfig = DEFAULT_CONFIG) -> float:
    tips = open_hand_tips(cfg)
    return float(np.hypot(*(tips[0, :2] - tips[1, :2])))


def resolve_contacts(joints: JointVector, obj: ObjectSpec, state: ObjectState,
                     cfg: WorkbenchConfig = DEFAULT_CONFIG,
                     fingers=range(5)) -> ContactSet:
    angles = _checked(joints)
    geom = pack_geometry(cfg.hand)
    planes, _ = obj.packed()
    beta = cfg.tactile.taxel_angles()
    window = np.deg2rad(cfg.tactile.window)
    active = np.zeros(5, dtype=np.bool_)
    active[list(fingers)] = True
    cs = ContactSet()
    warm = np.full(5, np.nan)
    kern.contacts_all(geom, angles, state.pose(), planes, beta, window, active,
                      cs.depth, cs.points, cs.normals, warm)
    return cs


def update_object(state: ObjectState, contacts: ContactSet, obj: ObjectSpec,
                  cfg: WorkbenchConfig = DEFAULT_CONFIG) -> ObjectState:
    """Move the object one step toward balance of the two grasp contacts."""
    if state.dropped or state.held:
        return state
    pose = state.pose()
    flags = np.array([0.0, 0.0])
    _, objp = obj.packed()
    kern.update_object(pose, flags, contacts.depth, contacts.points, contacts.normals,
                       objp, motor_params(cfg.hand))
    if flags[1] > 0.5:
        return replace(state, dropped=True)
    return replace(state, x=pose[0], y=pose[1], phi=pose[2])


def coupled_targets(joints: JointVector, cfg: WorkbenchConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Non-proximal targets that follow each proximal joint along the closing path."""
    out = np.zeros((5, 2))
    for f, fg in enumerate(cfg.hand.fingers):
        prox = joints.angles[3 * f] - fg.lower[0]
        for m in range(2):
            out[f, m] = np.clip(fg.lower[m + 1] + fg.coupling[m] * prox, fg.lower[m + 1], fg.upper[m + 1])
    return out


def step(state: SimState, cmd: MotorCommand, obj: ObjectSpec,
         dt: float | None = None, cfg: WorkbenchConfig = DEFAULT_CONFIG) -> SimState:
    """Advance the simulation by one fixed step."""
    if dt is not None and dt != cfg.hand.dt:
        raise DomainError(f"dt must equal the configured step {cfg.hand.dt}")
    contacts = resolve_contacts(state.joints, obj, state.obj, cfg)
    angles = state.joints.angles.copy()
    pose = state.obj.pose()
    flags = np.array([float(state.obj.held), float(state.obj.dropped)])
    targets = cmd.np_targets
    if targets is None:
        targets = angles.reshape(5, 3)[:, 1:].copy()
    _, objp = obj.packed()
    kern.integrate(pack_geometry(cfg.hand), angles, pose, flags, cmd.voltages, targets,
                   contacts.depth, contacts.points, contacts.normals, objp, motor_params(cfg.hand))
    joints = replace(state.joints, angles=angles)
    if flags[1] > 0.5:
        new_obj = replace(state.obj, dropped=True)
    else:
        new_obj = replace(state.obj, x=pose[0], y=pose[1], phi=pose[2])
    return SimState(joints, new_obj, state.time + cfg.hand.dt)


@functools.lru_cache(maxsize=256)
def nominal_pose(obj: ObjectSpec, cfg: WorkbenchConfig = DEFAULT_CONFIG) -> ObjectState:
    """Presentation pose: centred between the bases, at the height where the
    coupled closing path brings the grasp tips one object-width apart."""
    sec = obj.sections[0]
    geom = pack_geometry(cfg.hand)
    lo, _ = joint_limits(cfg.hand)
    gap = 2.0 * sec.a + 2.0 * cfg.hand.tip_radius
    pts = np.zeros((4, 2))

    def tips(theta):
        angles = lo.copy()
        for f in (0, 1):
            fg = cfg.hand.fingers[f]
            angles[3 * f] = theta
            for m in range(2):
                angles[3 * f + 1 + m] = fg.lower[m + 1] + fg.coupling[m] * (theta - fg.lower[0])
        out = []
        for f in (0, 1):
            kern.fk_finger(geom, f, angles, pts)
            out.append(pts[3].copy())
        return out

    # separation shrinks monotonically over the first part of the closing path
    grid = np.linspace(cfg.hand.fingers[0].lower[0], 0.3, 601)
    sep = np.array([t[1][0] - t[0][0] for t in map(tips, grid)])
    idx = int(np.argmin(np.abs(sep - gap)))
    th, mid = tips(grid[idx])
    return ObjectState(x=0.5 * (th[0] + mid[0]), y=0.5 * (th[1] + mid[1]), phi=0.0, held=True)


def sample_initial_pose(spec: ObjectSpec, rng: np.random.Generator,
                        cfg: WorkbenchConfig = DEFAULT_CONFIG) -> ObjectState:
    base = nominal_pose(spec, cfg)
    h = cfg.hand
    dx, dy, dphi = rng.uniform(-1.0, 1.0, size=3) * (h.pose_dx, h.pose_dy, h.pose_dphi)
    return replace(base, x=base.x + dx, y=base.y + dy, phi=base.phi + dphi)
