"""Procedural 2.5D parts and the planar geometry used by rendering and physics.

A part is a constant cross-section extrusion standing on the table plane.  Its
cross-section is a simple polygon (counter-clockwise outer ring) with optional
clockwise holes, expressed in a frame whose origin is the area centroid.

Family parameter table (all lengths in meters, drawn uniformly unless noted):

============  ================================================================
family        parameters
============  ================================================================
ngon          sides n in [3, 8]; circumradius r in [0.012, 0.045]; per-vertex
              radial jitter in [0.85, 1.0]; with probability 0.5 a centered
              16-gon hole of radius in [0.25, 0.5] * 0.85 r cos(pi/n)
gear          teeth k in [6, 16]; root radius in [0.012, 0.035]; tooth depth in
              [0.15, 0.30] * root radius; 12-gon bore of radius in
              [0.20, 0.45] * root radius.  Outer ring has exactly 4 k vertices
              (root, tip start, tip end, root end per tooth).
lbracket      arm lengths a, b in [0.025, 0.09]; thickness in [0.008, 0.025];
              6 vertices, no holes
slotted_bar   length in [0.03, 0.12]; width in [0.010, 0.035]; rectangular slot
              of length [0.3, 0.6] L and width [0.3, 0.5] W, shifted along the
              bar by up to 0.15 L
ellipse       semi-major a in [0.012, 0.055]; semi-minor in [0.3, 1.0] a;
              48 vertices, no holes
============  ================================================================

Height is drawn from [0.005, 0.05] for every family.  If the bounding-box
diagonal falls outside [0.01, 0.20] the cross-section is rescaled into range.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateGeometryError, RejectedInputError

FAMILIES = ("ngon", "gear", "lbracket", "slotted_bar", "ellipse")

HEIGHT_RANGE = (0.005, 0.05)
DIAGONAL_RANGE = (0.01, 0.20)


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def wrap_half(a: float) -> float:
    """Wrap an angle to [-pi/2, pi/2)."""
    w = math.fmod(a + 0.5 * math.pi, math.pi)
    if w < 0.0:
        w += math.pi
    return w - 0.5 * math.pi


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map part-frame points to the world."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ rotation(self.theta).T + np.array([self.x, self.y])

    def inverse_apply(self, points: np.ndarray) -> np.ndarray:
        """Map world points into the part frame."""
        pts = np.asarray(points, dtype=np.float64) - np.array([self.x, self.y])
        return pts @ rotation(self.theta)


@dataclass(frozen=True)
class Part:
    outer_ring: np.ndarray
    holes: tuple = ()
    height: float = 0.02
    part_id: int = 0
    family: str = "ngon"

    def __post_init__(self):
        object.__setattr__(self, "outer_ring", _frozen(self.outer_ring))
        object.__setattr__(self, "holes", tuple(_frozen(h) for h in self.holes))
        object.__setattr__(self, "height", float(self.height))
        object.__setattr__(self, "part_id", int(self.part_id))

    @property
    def rings(self) -> list[np.ndarray]:
        return [self.outer_ring, *self.holes]

    def longest_axis(self) -> float:
        lo = self.outer_ring.min(axis=0)
        hi = self.outer_ring.max(axis=0)
        return float(np.hypot(*(hi - lo)))

    def __eq__(self, other):
        if not isinstance(other, Part):
            return NotImplemented
        return (
            self.part_id == other.part_id
            and self.family == other.family
            and self.height == other.height
            and np.array_equal(self.outer_ring, other.outer_ring)
            and len(self.holes) == len(other.holes)
            and all(np.array_equal(a, b) for a, b in zip(self.holes, other.holes))
        )

    __hash__ = None


@dataclass(frozen=True)
class BBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)


def signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _ring_moments(ring: np.ndarray) -> tuple[float, float, float]:
    """Return (signed area, signed first moments Sx, Sy) of a ring."""
    ring = np.asarray(ring, dtype=np.float64)
    x0, y0 = ring[:, 0], ring[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    cross = x0 * y1 - x1 * y0
    a = 0.5 * cross.sum()
    cx = ((x0 + x1) * cross).sum() / 6.0
    cy = ((y0 + y1) * cross).sum() / 6.0
    return float(a), float(cx), float(cy)


def area_centroid(rings: Sequence[np.ndarray]) -> tuple[np.ndarray, float]:
    """Area-weighted centroid of an outer ring minus its holes.

    The first ring is the outer boundary; every further ring is a hole whose
    area is subtracted whatever its winding.  Returns ``(centroid, area)``.
    """
    if len(rings) == 0:
        raise DegenerateGeometryError("empty ring set")
    total_a = 0.0
    mx = my = 0.0
    for k, ring in enumerate(rings):
        if len(ring) < 3:
            raise DegenerateGeometryError("ring with fewer than 3 vertices")
        a, sx, sy = _ring_moments(ring)
        sign = math.copysign(1.0, a) if a != 0.0 else 1.0
        # normalise winding: outer adds, holes subtract
        w = sign if k == 0 else -sign
        total_a += w * a
        mx += w * sx
        my += w * sy
    if not total_a > 1e-18:
        raise DegenerateGeometryError(f"non-positive area {total_a!r}")
    return np.array([mx / total_a, my / total_a]), total_a


def bounding_box(part: Part, pose: Pose) -> BBox:
    """Minimal axis-aligned (camera frame) rectangle around the posed part."""
    pts = pose.apply(part.outer_ring)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return BBox(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def _edges(ring: np.ndarray):
    return ring, np.roll(ring, -1, axis=0)


def contains_points(part: Part, pose: Pose, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Vectorised silhouette test; boundary points count as inside."""
    pts = pose.inverse_apply(np.atleast_2d(points))
    px = pts[:, 0:1]
    py = pts[:, 1:2]
    inside = np.zeros(len(pts), dtype=bool)
    on_edge = np.zeros(len(pts), dtype=bool)
    for ring in part.rings:
        a, b = _edges(ring)
        x0, y0 = a[:, 0][None, :], a[:, 1][None, :]
        x1, y1 = b[:, 0][None, :], b[:, 1][None, :]
        straddle = (y0 > py) != (y1 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        crossings = np.count_nonzero(straddle & (px < xint), axis=1)
        inside ^= (crossings % 2).astype(bool)

        ex, ey = x1 - x0, y1 - y0
        wx, wy = px - x0, py - y0
        seg2 = ex * ex + ey * ey
        cross = ex * wy - ey * wx
        dot = ex * wx + ey * wy
        near = (np.abs(cross) <= tol * np.sqrt(seg2)) & (dot >= -tol) & (dot <= seg2 + tol)
        on_edge |= near.any(axis=1)
    return inside | on_edge


def silhouette_contains(part: Part, pose: Pose, point) -> bool:
    return bool(contains_points(part, pose, np.asarray(point, dtype=np.float64).reshape(1, 2))[0])


def transform_part(part: Part, pose: Pose) -> list[np.ndarray]:
    """World-frame copies of every ring."""
    return [pose.apply(r) for r in part.rings]


# ---------------------------------------------------------------------------
# generation


def part_id_for(seed: int, family: str) -> int:
    h = hashlib.blake2b(f"{family}:{int(seed)}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little")


def _regular(n: int, r: float, phase: float = 0.0) -> np.ndarray:
    ang = phase + 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([r * np.cos(ang), r * np.sin(ang)])


def _ngon(rng: np.random.Generator):
    n = int(rng.integers(3, 9))
    r = rng.uniform(0.012, 0.045)
    jitter = rng.uniform(0.85, 1.0, size=n)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    ang = phase + 2.0 * np.pi * np.arange(n) / n
    outer = np.column_stack([r * jitter * np.cos(ang), r * jitter * np.sin(ang)])
    holes = []
    if rng.uniform() < 0.5:
        hr = rng.uniform(0.25, 0.5) * 0.85 * r * math.cos(math.pi / n)
        holes.append(_regular(16, hr)[::-1])
    return outer, holes


def gear_vertex_count(teeth: int) -> int:
    """Outer-ring vertex count of a gear with ``teeth`` teeth."""
    return 4 * teeth


def _gear(rng: np.random.Generator):
    k = int(rng.integers(6, 17))
    root = rng.uniform(0.012, 0.035)
    tip = root * (1.0 + rng.uniform(0.15, 0.30))
    phase = rng.uniform(0.0, 2.0 * np.pi)
    pitch = 2.0 * np.pi / k
    pts = []
    for i in range(k):
        a0 = phase + i * pitch
        for frac, rad in ((0.0, root), (0.25, tip), (0.5, tip), (0.75, root)):
            a = a0 + frac * pitch
            pts.append((rad * math.cos(a), rad * math.sin(a)))
    bore = _regular(12, rng.uniform(0.20, 0.45) * root)[::-1]
    return np.array(pts), [bore]


def _lbracket(rng: np.random.Generator):
    a = rng.uniform(0.025, 0.09)
    b = rng.uniform(0.025, 0.09)
    t = rng.uniform(0.008, 0.025)
    outer = np.array([(0.0, 0.0), (a, 0.0), (a, t), (t, t), (t, b), (0.0, b)])
    return outer, []


def _slotted_bar(rng: np.random.Generator):
    length = rng.uniform(0.03, 0.12)
    width = rng.uniform(0.01, 0.035)
    hl, hw = 0.5 * length, 0.5 * width
    outer = np.array([(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)])
    sl = 0.5 * rng.uniform(0.3, 0.6) * length
    sw = 0.5 * rng.uniform(0.3, 0.5) * width
    off = rng.uniform(-0.15, 0.15) * length
    slot = np.array([(off - sl, -sw), (off - sl, sw), (off + sl, sw), (off + sl, -sw)])
    return outer, [slot]


def _ellipse(rng: np.random.Generator):
    a = rng.uniform(0.012, 0.055)
    b = a * rng.uniform(0.3, 1.0)
    ang = 2.0 * np.pi * np.arange(48) / 48
    return np.column_stack([a * np.cos(ang), b * np.sin(ang)]), []


_BUILDERS = {
    "ngon": _ngon,
    "gear": _gear,
    "lbracket": _lbracket,
    "slotted_bar": _slotted_bar,
    "ellipse": _ellipse,
}


def generate_part(seed: int, family: str) -> Part:
    """Deterministically build a part of the given family from ``seed``."""
    if family not in _BUILDERS:
        raise RejectedInputError(f"unknown part family {family!r}; expected one of {FAMILIES}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), FAMILIES.index(family)]))
    outer, holes = _BUILDERS[family](rng)
    height = rng.uniform(*HEIGHT_RANGE)

    if signed_area(outer) < 0:
        outer = outer[::-1]
    holes = [h if signed_area(h) < 0 else h[::-1] for h in holes]

    diag = float(np.hypot(*(outer.max(axis=0) - outer.min(axis=0))))
    lo, hi = DIAGONAL_RANGE
    scale = 1.0
    if diag > hi:
        scale = hi / diag * 0.999
    elif diag < lo:
        scale = lo / diag * 1.001
    outer = outer * scale
    holes = [h * scale for h in holes]

    c, _ = area_centroid([outer, *holes])
    outer = outer - c
    holes = [h - c for h in holes]
    return Part(outer, tuple(holes), height, part_id_for(seed, family), family)


def corpus_seeds(n: int, master_seed: int) -> list[int]:
    """Per-part seeds; the first k of n seeds equal the seeds for k."""
    return [int(s) for s in np.random.SeedSequence(int(master_seed)).generate_state(n, dtype=np.uint64)]


def generate_corpus(n: int, master_seed: int) -> list[Part]:
    """``n`` parts cycling through the families, seeds derived from ``master_seed``."""
    return [generate_part(s, FAMILIES[i % len(FAMILIES)]) for i, s in enumerate(corpus_seeds(n, master_seed))]
