"""Fingertip taxel readings and the force estimate built from them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as kern
from .config import DEFAULT_CONFIG, N_TAXELS, TactileConfig


def taxel_normals(cfg: TactileConfig = DEFAULT_CONFIG.tactile) -> np.ndarray:
    """Unit normals of the 12 taxels in the fingertip frame, shape (12, 3).

    Frame axes: x along the pad normal, y along the finger axis, z out of the
    hand plane. The taxels form a single fan in the x-y plane.
    """
    beta = cfg.taxel_angles()
    return np.column_stack([np.cos(beta), np.sin(beta), np.zeros(N_TAXELS)])


def spread_matrix(stiffness: float, cfg: TactileConfig = DEFAULT_CONFIG.tactile) -> np.ndarray:
    """Column-normalised Gaussian spread over taxel angles; wider for softer objects."""
    if stiffness <= 0:
        raise ValueError("stiffness must be positive")
    width = np.deg2rad(cfg.spread_ref) * np.sqrt(cfg.spread_k_ref / stiffness)
    if width == 0.0:
        return np.eye(N_TAXELS)
    beta = cfg.taxel_angles()
    w = np.exp(-0.5 * ((beta[:, None] - beta[None, :]) / width) ** 2)
    return w / w.sum(axis=0, keepdims=True)


def tactile_params(cfg: TactileConfig = DEFAULT_CONFIG.tactile) -> np.ndarray:
    return np.array([np.deg2rad(cfg.window), cfg.gain, cfg.r_max, cfg.scale, cfg.noise_sigma])


@dataclass(frozen=True)
class TaxelArray:
    values: np.ndarray
    normals: np.ndarray
    r_max: float = DEFAULT_CONFIG.tactile.r_max

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = np.asarray(self.normals, dtype=float)
        if v.shape != (N_TAXELS,) or n.shape != (N_TAXELS, 3):
            raise ValueError("a taxel array holds exactly 12 values and 12 normals")
        if not np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12):
            raise ValueError("taxel normals must be unit vectors")
        object.__setattr__(self, "values", np.clip(v, 0.0, self.r_max))
        object.__setattr__(self, "normals", n)


@dataclass(frozen=True)
class ContactForce:
    magnitude: float
    direction: np.ndarray  # unit vector in the fingertip frame, zeros when magnitude is 0
    centroid: float  # response-weighted taxel index, nan without response

    @property
    def vector(self) -> np.ndarray:
        return self.magnitude * self.direction


def taxel_pressures(depths: np.ndarray, stiffness: float, rng: np.random.Generator | None = None,
                    cfg: TactileConfig = DEFAULT_CONFIG.tactile, *,
                    spread: np.ndarray | None = None) -> TaxelArray:
    """Pressure readings of one fingertip from its 12 taxel penetrations.

    Noise is drawn only when an rng is given and the configured sigma is
    non-zero.
    """
    depths = np.asarray(depths, dtype=float)
    if depths.shape != (N_TAXELS,):
        raise ValueError("expected 12 penetrations")
    if np.any(depths < 0):
        raise ValueError("penetrations must be non-negative")
    if spread is None:
        spread = spread_matrix(stiffness, cfg)
    noise = np.zeros(N_TAXELS)
    if rng is not None and cfg.noise_sigma > 0:
        noise = rng.standard_normal(N_TAXELS)
    out = np.empty(N_TAXELS)
    kern.pressures(depths, float(stiffness), spread, noise, tactile_params(cfg), out)
    return TaxelArray(out, taxel_normals(cfg), cfg.r_max)


def estimate_force(t: TaxelArray, scale: float = DEFAULT_CONFIG.tactile.scale) -> ContactForce:
    vec = scale * (t.values @ t.normals)
    mag = float(np.linalg.norm(vec))
    direction = vec / mag if mag > 0 else np.zeros(3)
    total = t.values.sum()
    centroid = float(np.arange(N_TAXELS) @ t.values / total) if total > 0 else float("nan")
    return ContactForce(mag, direction, centroid)


def detect_contact(f: ContactForce, threshold: float) -> bool:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return f.magnitude > threshold
