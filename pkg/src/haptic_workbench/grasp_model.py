"""Stable-grasp model: synthetic demonstrations, a Gaussian mixture over
(d, alpha, four non-proximal joints), and mixture regression of the
stabilisation targets from the fingertip distance d.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from . import _kernels as kern
from .config import DEFAULT_CONFIG, WorkbenchConfig
from .control import GraspFrame, object_position
from .handsim import pack_geometry

log = logging.getLogger(__name__)

GMM_SCHEMA = "haptic-gmm/1"
DEMO_SCHEMA = "haptic-demos/1"
DIM = 6  # d, alpha, thumb mid, thumb distal, middle mid, middle distal

# contact must land on the instrumented pad, in fan-angle radians
PAD_RANGE = (math.radians(-45.0), math.radians(60.0))
PALM_CLEARANCE = 10.0  # mm between palm line and object
KNUCKLE_CLEARANCE = 4.0  # mm between knuckle centres and object
PAD_SOFT = math.radians(25.0)  # scale of the pad-centring term in the grasp score


@dataclass(frozen=True)
class DemoSample:
    d: float
    alpha: float
    non_proximal: tuple[float, float, float, float]
    proximal: tuple[float, float] = (math.nan, math.nan)  # kept for audit
    width: float = math.nan

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError("fingertip distance must be positive")
        if not 0.0 <= self.alpha <= math.pi:
            raise ValueError("object position angle must lie in [0, pi]")

    def vector(self) -> np.ndarray:
        return np.array([self.d, self.alpha, *self.non_proximal])

    def grasp_joints(self) -> np.ndarray:
        """Six grasp joints [thumb prox, mid, dist, middle prox, mid, dist]."""
        th = (self.proximal[0], self.non_proximal[0], self.non_proximal[1])
        mid = (self.proximal[1], self.non_proximal[2], self.non_proximal[3])
        return np.array(th + mid)


@dataclass
class DemoSet:
    samples: list[DemoSample]
    skipped: int = 0

    def matrix(self) -> np.ndarray:
        return np.array([s.vector() for s in self.samples])


# --------------------------------------------------------------------------
# demonstrations


def _grasp_geometry(x: np.ndarray, geom: np.ndarray):
    """Tip centres, tip angles and knuckles of thumb and middle for 6 joints."""
    joints = np.zeros(15)
    joints[0:3] = x[0:3]
    joints[3:6] = x[3:6]
    pts_th = np.zeros((4, 2))
    pts_mid = np.zeros((4, 2))
    psi_th = kern.fk_finger(geom, 0, joints, pts_th)
    psi_mid = kern.fk_finger(geom, 1, joints, pts_mid)
    return pts_th, psi_th, pts_mid, psi_mid


def _fan_of(direction: float, psi: float, sign: float) -> float:
    b = 0.5 * math.pi - sign * (direction - psi)
    return (b + math.pi) % (2 * math.pi) - math.pi


def _solve_width(width: float, cfg: WorkbenchConfig, geom: np.ndarray):
    r = cfg.hand.tip_radius
    d = width + 2 * r
    rho = width / 2
    fingers = cfg.hand.fingers[:2]
    lo = np.array([*fingers[0].lower, *fingers[1].lower])
    hi = np.array([*fingers[0].upper, *fingers[1].upper])
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    s_th = fingers[0].flex_sign
    s_mid = fingers[1].flex_sign

    def fan_angles(x):
        pth, psi_th, pmid, psi_mid = _grasp_geometry(x, geom)
        u = pmid[3] - pth[3]
        ang = math.atan2(u[1], u[0])
        return _fan_of(ang, psi_th, s_th), _fan_of(ang + math.pi, psi_mid, s_mid)

    def objective(x):
        b_th, b_mid = fan_angles(x)
        return float(np.sum(((x - mid) / half) ** 2) + (b_th ** 2 + b_mid ** 2) / PAD_SOFT ** 2)

    def gap(x):
        pth, _, pmid, _ = _grasp_geometry(x, geom)
        return float(np.hypot(*(pmid[3] - pth[3])) - d)

    def inequalities(x):
        pth, psi_th, pmid, psi_mid = _grasp_geometry(x, geom)
        u = pmid[3] - pth[3]
        ang = math.atan2(u[1], u[0])
        b_th = _fan_of(ang, psi_th, s_th)
        b_mid = _fan_of(ang + math.pi, psi_mid, s_mid)
        centre = 0.5 * (pth[3] + pmid[3])
        out = [b_th - PAD_RANGE[0], PAD_RANGE[1] - b_th,
               b_mid - PAD_RANGE[0], PAD_RANGE[1] - b_mid,
               centre[1] - rho - PALM_CLEARANCE]
        for pts in (pth, pmid):
            for j in (1, 2):
                out.append(float(np.hypot(*(pts[j] - centre))) - rho - KNUCKLE_CLEARANCE)
        return np.array(out)

    # start from the symmetric half-closed hand
    x0 = lo + np.array([0.25, 0.35, 0.35, 0.25, 0.35, 0.35]) * (hi - lo)
    res = minimize(objective, x0, method="SLSQP", bounds=list(zip(lo, hi)),
                   constraints=[{"type": "eq", "fun": gap}, {"type": "ineq", "fun": inequalities}],
                   options={"maxiter": 300, "ftol": 1e-12})
    if not res.success or abs(gap(res.x)) > 1e-6 or np.min(inequalities(res.x)) < -1e-6:
        return None
    return np.clip(res.x, lo, hi)


def solve_stable_grasp(width: float, cfg: WorkbenchConfig = DEFAULT_CONFIG) -> DemoSample | None:
    """Joint-limit-centred two-finger grasp of a disc of the given width.

    Returns None when no configuration satisfies the contact constraints.
    """
    geom = pack_geometry(cfg.hand)
    r = cfg.hand.tip_radius
    d = width + 2 * r
    if d >= open_tip_distance(cfg):
        return None
    x = _solve_width(width, cfg, geom)
    if x is None:
        return None
    pth, _, pmid, _ = _grasp_geometry(x, geom)
    u = (pmid[3] - pth[3]) / np.hypot(*(pmid[3] - pth[3]))
    alpha = object_position(pth[3] + r * u, pmid[3] - r * u, GraspFrame.from_hand(cfg.hand))
    return DemoSample(d, alpha, (x[1], x[2], x[4], x[5]), (x[0], x[3]), width)


def open_tip_distance(cfg: WorkbenchConfig = DEFAULT_CONFIG) -> float:
    geom = pack_geometry(cfg.hand)
    lo = np.array([*cfg.hand.fingers[0].lower, *cfg.hand.fingers[1].lower])
    pth, _, pmid, _ = _grasp_geometry(lo, geom)
    return float(np.hypot(*(pmid[3] - pth[3])))


def generate_demonstrations(n: int, size_range: tuple[float, float], rng: np.random.Generator,
                            cfg: WorkbenchConfig = DEFAULT_CONFIG, noise: float = 0.0,
                            n_components: int = 3) -> DemoSet:
    """Sample object widths and solve a stable grasp for each.

    ``noise`` adds zero-mean Gaussian jitter (radians) to the recorded angles,
    standing in for demonstration variability.
    """
    if n < 10 * n_components:
        raise ValueError(f"need at least {10 * n_components} demonstrations for {n_components} components")
    widths = rng.uniform(size_range[0], size_range[1], size=n)
    jitter = rng.standard_normal((n, 5)) * noise
    cache: dict[float, DemoSample | None] = {}
    out, skipped = [], 0
    for w, e in zip(widths, jitter):
        if w not in cache:
            cache[w] = solve_stable_grasp(float(w), cfg)
        s = cache[w]
        if s is None:
            skipped += 1
            continue
        if noise > 0:
            s = DemoSample(s.d, min(max(s.alpha + e[0], 0.0), math.pi),
                           tuple(np.add(s.non_proximal, e[1:])), s.proximal, s.width)
        out.append(s)
    if skipped:
        log.warning("skipped %d infeasible demonstration widths", skipped)
    return DemoSet(out, skipped)


@dataclass(frozen=True)
class GraspCheck:
    normal_angle: float  # radians between object normal at one contact and the reversed other
    moment_arm: float  # mm, offset of the squeeze line from the object centre
    on_pad: bool

    def stable(self, max_angle: float = math.radians(2.0), max_arm: float = 0.1) -> bool:
        return self.on_pad and self.normal_angle < max_angle and self.moment_arm < max_arm


def verify_demonstration(sample: DemoSample, cfg: WorkbenchConfig = DEFAULT_CONFIG) -> GraspCheck:
    """Re-derive the contact geometry of a noise-free demonstration from its joints.

    The disc is placed tangent to both fingertips with its centre on the
    perpendicular bisector of the tip centres, on the side away from the palm.
    """
    hand = cfg.hand
    r = hand.tip_radius
    rho = sample.width / 2
    tips, angles = [], []
    for f, q in enumerate(sample.grasp_joints().reshape(2, 3)):
        fg = hand.fingers[f]
        x, y = fg.base
        ang = fg.base_angle
        for length, theta in zip(fg.links, q):
            ang += fg.flex_sign * theta
            x += length * math.cos(ang)
            y += length * math.sin(ang)
        tips.append(np.array([x, y]))
        angles.append(ang)
    chord = tips[1] - tips[0]
    half = np.linalg.norm(chord) / 2
    reach = rho + r
    offset = math.sqrt(max(reach ** 2 - half ** 2, 0.0))
    perp = np.array([-chord[1], chord[0]]) / (2 * half)
    if perp[1] < 0:
        perp = -perp
    centre = 0.5 * (tips[0] + tips[1]) + offset * perp
    contacts = [t + r * (centre - t) / np.linalg.norm(centre - t) for t in tips]
    normals = [(c - centre) / np.linalg.norm(c - centre) for c in contacts]
    cosang = float(np.clip(-normals[0] @ normals[1], -1.0, 1.0))
    line = contacts[1] - contacts[0]
    arm = abs(line[0] * (centre - contacts[0])[1] - line[1] * (centre - contacts[0])[0]) / np.linalg.norm(line)
    on_pad = True
    for f, (c, t) in enumerate(zip(contacts, tips)):
        fg = hand.fingers[f]
        direction = math.atan2(*(c - t)[::-1])
        b = 0.5 * math.pi - fg.flex_sign * (direction - angles[f])
        b = (b + math.pi) % (2 * math.pi) - math.pi
        on_pad &= PAD_RANGE[0] - 1e-6 <= b <= PAD_RANGE[1] + 1e-6
    return GraspCheck(math.acos(cosang), float(arm), bool(on_pad))


def write_demos(demos: DemoSet, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"schema={DEMO_SCHEMA}\n")
        fh.write(f"skipped={demos.skipped}\n")
        w = csv.writer(fh)
        w.writerow(["width", "d", "alpha", "thumb_mid", "thumb_dist", "middle_mid", "middle_dist",
                    "thumb_prox", "middle_prox"])
        for s in demos.samples:
            w.writerow([repr(float(v)) for v in (s.width, s.d, s.alpha, *s.non_proximal, *s.proximal)])


def read_demos(path: str | Path) -> DemoSet:
    with open(path, newline="") as fh:
        if fh.readline().strip() != f"schema={DEMO_SCHEMA}":
            raise ValueError("not a demonstration file")
        skipped = int(fh.readline().split("=", 1)[1])
        rows = list(csv.reader(fh))[1:]
    out = []
    for r in rows:
        v = [float(x) for x in r]
        out.append(DemoSample(v[1], v[2], tuple(v[3:7]), tuple(v[7:9]), v[0]))
    return DemoSet(out, skipped)


# --------------------------------------------------------------------------
# mixture model


@dataclass
class Gmm:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    covariances: np.ndarray  # (K, D, D)
    shift: np.ndarray = field(default_factory=lambda: np.zeros(DIM))  # standardisation constants
    scale: np.ndarray = field(default_factory=lambda: np.ones(DIM))
    history: list[float] = field(default_factory=list)  # log-likelihood per EM iteration
    reseeded: int = 0
    input_range: tuple[float, float] = (-math.inf, math.inf)

    @property
    def n_components(self) -> int:
        return len(self.weights)


def _log_gauss(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, (x - mean).T)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (np.sum(z * z, axis=0) + x.shape[1] * math.log(2 * math.pi) + logdet)


def _component_logs(x, weights, means, covs) -> np.ndarray:
    return np.column_stack([math.log(w) + _log_gauss(x, m, c) for w, m, c in zip(weights, means, covs)])


def log_likelihood(gmm: Gmm, samples: np.ndarray) -> float:
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    return float(np.sum(logsumexp(_component_logs(x, gmm.weights, gmm.means, gmm.covariances), axis=1)))


def _kmeans_init(z: np.ndarray, k: int, rng: np.random.Generator, iters: int = 20) -> np.ndarray:
    n = len(z)
    centres = [z[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min([np.sum((z - c) ** 2, axis=1) for c in centres], axis=0)
        total = d2.sum()
        idx = rng.integers(n) if total == 0 else rng.choice(n, p=d2 / total)
        centres.append(z[idx])
    centres = np.array(centres)
    labels = np.zeros(n, dtype=int)
    for _ in range(iters):
        labels = np.argmin(((z[:, None, :] - centres[None]) ** 2).sum(-1), axis=1)
        for j in range(k):
            if np.any(labels == j):
                centres[j] = z[labels == j].mean(axis=0)
    return labels


def _m_step(z, resp, eps):
    nk = resp.sum(axis=0)
    weights = nk / nk.sum()
    means = (resp.T @ z) / nk[:, None]
    covs = np.empty((len(nk), z.shape[1], z.shape[1]))
    for j in range(len(nk)):
        diff = z - means[j]
        c = (resp[:, j, None] * diff).T @ diff / nk[j]
        covs[j] = 0.5 * (c + c.T) + eps * np.eye(z.shape[1])
    return weights, means, covs


def fit_gmm(samples, k: int = 3, seed: int = 0, max_iter: int = 200, tol: float = 1e-10,
            eps: float = 1e-6, min_iter: int = 0) -> Gmm:
    """EM fit of a full-covariance mixture in standardised coordinates.

    Covariances receive ``eps`` on the diagonal in standardised units, so the
    stored (original-unit) covariances carry eps * scale**2. Iteration stops
    once the log-likelihood gain drops below ``tol`` (after ``min_iter``).
    """
    x = np.asarray(samples, dtype=float)
    n, dim = x.shape
    if n < 10 * k:
        raise ValueError(f"need at least {10 * k} samples for {k} components")
    shift = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    z = (x - shift) / scale
    rng = np.random.default_rng(seed)
    labels = _kmeans_init(z, k, rng)
    resp = np.zeros((n, k))
    resp[np.arange(n), labels] = 1.0
    reseeded = 0
    history: list[float] = []
    point_ll = np.zeros(n)
    for it in range(max_iter):
        for j in np.flatnonzero(resp.sum(axis=0) < 1e-10):
            # restart the dead component on the worst-explained sample
            worst = int(np.argmin(point_ll))
            resp[worst] = 0.0
            resp[worst, j] = 1.0
            reseeded += 1
            log.info("re-seeded empty mixture component %d", j)
        weights, means, covs = _m_step(z, resp, eps)
        logs = _component_logs(z, weights, means, covs)
        point_ll = logsumexp(logs, axis=1)
        history.append(float(point_ll.sum()))
        resp = np.exp(logs - point_ll[:, None])
        if it >= max(min_iter, 1) and history[-1] - history[-2] < tol:
            break
    # undo the standardisation; the log-likelihood shifts by a constant
    jac = float(np.sum(np.log(scale)))
    gmm = Gmm(weights, means * scale + shift,
              covs * np.outer(scale, scale)[None], shift, scale,
              [h - n * jac for h in history], reseeded,
              (float(x[:, 0].min()), float(x[:, 0].max())))
    return gmm


@dataclass(frozen=True)
class StableGraspTarget:
    alpha: float
    non_proximal: np.ndarray  # thumb mid, thumb distal, middle mid, middle distal
    out_of_range: bool = False


def regress(gmm: Gmm, d: float) -> StableGraspTarget:
    """Conditional mean of (alpha, non-proximal joints) given d."""
    if not d > 0:
        raise ValueError("fingertip distance must be positive")
    var_d = gmm.covariances[:, 0, 0]
    mu_d = gmm.means[:, 0]
    logs = np.log(gmm.weights) - 0.5 * (np.log(2 * math.pi * var_d) + (d - mu_d) ** 2 / var_d)
    h = np.exp(logs - logsumexp(logs))
    out = np.zeros(DIM - 1)
    for j in range(gmm.n_components):
        out += h[j] * (gmm.means[j, 1:] + gmm.covariances[j, 1:, 0] / var_d[j] * (d - mu_d[j]))
    lo, hi = gmm.input_range
    span = hi - lo
    flag = bool(d < lo - 0.1 * span or d > hi + 0.1 * span)
    return StableGraspTarget(float(out[0]), out[1:].copy(), flag)


def select_k(samples, candidates=range(1, 6), seed: int = 0, holdout: float = 0.25) -> int:
    """Pick the component count with the best held-out log-likelihood."""
    x = np.asarray(samples, dtype=float)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(x))
    n_test = max(1, int(round(holdout * len(x))))
    test, train = x[order[:n_test]], x[order[n_test:]]
    best, best_ll = None, -math.inf
    for k in candidates:
        if len(train) < 10 * k:
            break
        ll = log_likelihood(fit_gmm(train, k, seed), test)
        if ll > best_ll:
            best, best_ll = k, ll
    if best is None:
        raise ValueError("not enough samples for any candidate component count")
    return best


def dump_gmm(gmm: Gmm) -> str:
    buf = io.StringIO()
    buf.write(f"schema={GMM_SCHEMA}\n")
    buf.write(f"components={gmm.n_components}\ndim={gmm.means.shape[1]}\n")
    buf.write("input_range=" + " ".join(repr(float(v)) for v in gmm.input_range) + "\n")
    buf.write("shift=" + " ".join(repr(float(v)) for v in gmm.shift) + "\n")
    buf.write("scale=" + " ".join(repr(float(v)) for v in gmm.scale) + "\n")
    for j in range(gmm.n_components):
        buf.write(f"weight={float(gmm.weights[j])!r}\n")
        buf.write("mean=" + " ".join(repr(float(v)) for v in gmm.means[j]) + "\n")
        buf.write("cov=" + " ".join(repr(float(v)) for v in gmm.covariances[j].ravel()) + "\n")
    return buf.getvalue()


def parse_gmm(text: str) -> Gmm:
    lines = text.splitlines()
    if not lines or lines[0] != f"schema={GMM_SCHEMA}":
        raise ValueError("not a mixture-model file")
    kv = [ln.split("=", 1) for ln in lines[1:]]
    k = int(kv[0][1])
    dim = int(kv[1][1])

    def floats(s):
        return np.array([float(v) for v in s.split()])

    rng_lo, rng_hi = floats(kv[2][1])
    shift, scale = floats(kv[3][1]), floats(kv[4][1])
    w, m, c = [], [], []
    for j in range(k):
        base = 5 + 3 * j
        w.append(float(kv[base][1]))
        m.append(floats(kv[base + 1][1]))
        c.append(floats(kv[base + 2][1]).reshape(dim, dim))
    return Gmm(np.array(w), np.array(m), np.array(c), shift, scale, [], 0, (rng_lo, rng_hi))
