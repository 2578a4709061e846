"""Synthetic 30-object test set: 21 household-like objects and 9 soft extras.

Each object is described by an archetype solid which is sliced at the four
contact-plane offsets to give the per-plane superellipse cross-sections.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

from .config import DEFAULT_CONFIG, HandConfig
from .handsim import CrossSection, ObjectSpec

YCB_LIKE = "ycb-like"
SUPPLEMENTAL = "supplemental"


@dataclass(frozen=True)
class Solid:
    """Archetype solid centred on the grasp plane.

    kind: "round" (ellipsoid with vertical semi-axis ``c``), "prism" (constant
    section of total height ``c``) or "taper" (section scaled linearly with
    height by ``taper`` per 40 mm, height ``c``).
    """

    kind: str
    a: float
    b: float
    p: float
    c: float
    taper: float = 0.0

    def section(self, z: float) -> CrossSection | None:
        if self.kind == "round":
            if abs(z) >= self.c:
                return None
            s = math.sqrt(1.0 - (z / self.c) ** 2)
        elif self.kind == "prism":
            if abs(z) >= self.c / 2:
                return None
            s = 1.0
        elif self.kind == "taper":
            if abs(z) >= self.c / 2:
                return None
            s = 1.0 + self.taper * z / 40.0
        else:
            raise ValueError(f"unknown solid kind {self.kind!r}")
        # sections thinner than 2 mm are treated as absent
        if self.a * s < 2.0:
            return None
        return CrossSection(self.a * s, self.b * s, self.p)


def sphere(r: float) -> Solid:
    return Solid("round", r, r, 2.0, r)


def ellipsoid(a: float, b: float, c: float) -> Solid:
    return Solid("round", a, b, 2.0, c)


def cylinder(r: float, h: float) -> Solid:
    return Solid("prism", r, r, 2.0, h)


def box(a: float, b: float, h: float, p: float = 8.0) -> Solid:
    return Solid("prism", a, b, p, h)


def taper(a: float, b: float, h: float, t: float, p: float = 2.0) -> Solid:
    return Solid("taper", a, b, p, h, t)


# name, solid, stiffness (N/mm), friction, load (N)
_YCB = [
    ("apple", sphere(34.0), 2.5, 0.8, 0.20),
    ("orange", sphere(31.0), 1.2, 0.9, 0.18),
    ("plum", sphere(23.0), 0.8, 0.8, 0.08),
    ("peach", sphere(27.0), 1.2, 0.9, 0.12),
    ("lemon", ellipsoid(25.0, 27.0, 34.0), 1.0, 0.8, 0.10),
    ("tennis_ball", sphere(31.0), 0.4, 1.0, 0.06),
    ("racquetball", sphere(27.0), 0.3, 1.0, 0.04),
    ("softball", sphere(37.0), 3.5, 0.8, 0.18),
    ("chips_can", cylinder(32.5, 200.0), 3.0, 0.7, 0.20),
    ("coffee_can", cylinder(36.0, 130.0), 5.0, 0.7, 0.25),
    ("soup_can", cylinder(30.0, 100.0), 5.0, 0.7, 0.22),
    ("mustard_bottle", taper(20.0, 32.0, 180.0, 0.25, 2.5), 2.0, 0.7, 0.20),
    ("bleach_bottle", taper(25.0, 40.0, 220.0, -0.15, 3.0), 2.5, 0.7, 0.25),
    ("cracker_box", box(30.0, 80.0, 200.0), 1.5, 0.7, 0.18),
    ("sugar_box", box(19.0, 45.0, 170.0), 1.8, 0.7, 0.22),
    ("pudding_box", box(17.0, 44.0, 60.0), 2.0, 0.7, 0.12),
    ("gelatin_box", box(14.0, 36.0, 50.0), 2.0, 0.7, 0.08),
    ("meat_can", box(25.0, 45.0, 60.0, 4.0), 4.0, 0.7, 0.20),
    ("banana", ellipsoid(16.0, 18.0, 30.0), 1.0, 0.8, 0.10),
    ("foam_brick", box(25.0, 37.0, 50.0), 0.2, 1.2, 0.03),
    ("sponge", box(22.0, 55.0, 90.0, 6.0), 0.2, 1.2, 0.02),
]

_SUPPLEMENTAL = [
    ("soft_ball_large", sphere(34.0), 0.2, 1.2, 0.04),
    ("stress_ball", sphere(29.5), 0.2, 1.2, 0.04),
    ("foam_cylinder", cylinder(30.0, 100.0), 0.3, 1.2, 0.04),
    ("soft_box", box(19.0, 45.0, 170.0), 0.3, 1.2, 0.05),
    ("rubber_ellipsoid", ellipsoid(22.0, 30.0, 40.0), 0.6, 1.0, 0.06),
    ("hard_ellipsoid", ellipsoid(22.0, 30.0, 40.0), 5.0, 0.7, 0.15),
    ("soft_taper", taper(24.0, 30.0, 120.0, 0.3), 0.4, 1.1, 0.05),
    ("clay_block", box(25.0, 25.0, 80.0, 4.0), 1.0, 0.9, 0.15),
    ("sponge_roll", cylinder(20.0, 90.0), 0.2, 1.2, 0.02),
]


def _build(entry, tag: str, idx: int, hand: HandConfig) -> ObjectSpec:
    name, solid, k, mu, load = entry
    sections = tuple(solid.section(z) for z in hand.plane_offsets)
    return ObjectSpec(f"obj{idx:02d}", name, k, mu, sections, load, tag)


def default_catalog(hand: HandConfig = DEFAULT_CONFIG.hand) -> tuple[ObjectSpec, ...]:
    objs = [_build(e, YCB_LIKE, i, hand) for i, e in enumerate(_YCB)]
    objs += [_build(e, SUPPLEMENTAL, len(_YCB) + i, hand) for i, e in enumerate(_SUPPLEMENTAL)]
    return tuple(objs)


def stiffness_pairs(catalog) -> list[tuple[str, str]]:
    """Pairs of objects with identical geometry but different stiffness."""
    out = []
    for i, a in enumerate(catalog):
        for b in catalog[i + 1:]:
            if a.sections == b.sections and a.stiffness != b.stiffness:
                out.append((a.id, b.id))
    return out


def catalog_hash(catalog) -> str:
    h = hashlib.sha256()
    for o in catalog:
        h.update(repr((o.id, o.name, o.stiffness, o.friction, o.load, o.tag,
                       [None if s is None else (s.a, s.b, s.p) for s in o.sections])).encode())
    return h.hexdigest()[:16]
