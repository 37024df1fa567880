import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from precisegrasp.errors import DegenerateGeometryError, RejectedInputError
from precisegrasp.parts import (DIAGONAL_RANGE, FAMILIES, HEIGHT_RANGE, Part, Pose, area_centroid, bounding_box,
                                contains_points, corpus_seeds, gear_vertex_count, generate_corpus, generate_part,
                                rotation, signed_area, silhouette_contains, transform_part, wrap_angle, wrap_half)

from conftest import rect_part


def unit_square(s=1.0):
    h = s / 2
    return np.array([[-h, -h], [h, -h], [h, h], [-h, h]])


def ray_crossing_inside(rings, p):
    """Independent even-odd test with explicit boundary handling, one point at a time."""
    x, y = p
    inside = False
    for ring in rings:
        n = len(ring)
        for i in range(n):
            (x0, y0), (x1, y1) = ring[i], ring[(i + 1) % n]
            # on-segment check
            cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)
            if abs(cross) <= 1e-12 * math.hypot(x1 - x0, y1 - y0) and \
                    min(x0, x1) - 1e-12 <= x <= max(x0, x1) + 1e-12 and min(y0, y1) - 1e-12 <= y <= max(y0, y1) + 1e-12:
                return True
            if (y0 > y) != (y1 > y):
                xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
                if x < xi:
                    inside = not inside
    return inside


def test_generate_is_deterministic():
    a, b = generate_part(7, "ngon"), generate_part(7, "ngon")
    assert a == b
    assert np.array_equal(a.outer_ring, b.outer_ring)
    assert generate_part(8, "ngon") != a


def test_unknown_family_rejected():
    with pytest.raises(RejectedInputError):
        generate_part(1, "sprocket")


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("seed", range(12))
def test_generated_parts_satisfy_invariants(seed, family):
    p = generate_part(seed, family)
    c, area = area_centroid(p.rings)
    assert np.abs(c).max() < 1e-12
    assert area > 0
    assert signed_area(p.outer_ring) > 0
    for h in p.holes:
        assert signed_area(h) < 0
        assert contains_points(p, Pose(0, 0, 0), h).all()
    assert HEIGHT_RANGE[0] <= p.height <= HEIGHT_RANGE[1]
    assert DIAGONAL_RANGE[0] <= p.longest_axis() <= DIAGONAL_RANGE[1]
    assert p.family == family
    assert len(p.outer_ring) >= 3
    assert 0 <= p.part_id < 2 ** 64


def _segments_intersect(p1, p2, q1, q2):
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    return orient(p1, p2, q1) * orient(p1, p2, q2) < 0 and orient(q1, q2, p1) * orient(q1, q2, p2) < 0


@pytest.mark.parametrize("family", FAMILIES)
def test_outer_ring_is_simple(family):
    for seed in range(4):
        ring = generate_part(seed, family).outer_ring
        n = len(ring)
        for i in range(n):
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                assert not _segments_intersect(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n])


def test_gear_vertex_count_matches_construction():
    # four vertices per tooth: root start, tip start, tip end, root end
    for seed in (3, 4, 5):
        p = generate_part(seed, "gear")
        rng_angles = np.arctan2(p.outer_ring[:, 1], p.outer_ring[:, 0])
        radii = np.hypot(*p.outer_ring.T)
        tips = radii > 0.5 * (radii.min() + radii.max())
        # count teeth as runs of tip vertices around the ring
        teeth = int(np.count_nonzero(tips & ~np.roll(tips, 1)))
        assert len(p.outer_ring) == gear_vertex_count(teeth) == 4 * teeth
        assert len(rng_angles) == len(p.outer_ring)


def test_area_centroid_examples():
    c, a = area_centroid([unit_square()])
    assert np.allclose(c, 0) and a == pytest.approx(1.0)
    hole = unit_square(0.5)[::-1]
    c, a = area_centroid([unit_square(), hole])
    assert np.allclose(c, 0, atol=1e-15) and a == pytest.approx(0.75)
    # two unit squares side by side, by the composite-area rule
    ell = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [0, 1]], dtype=float)
    c, a = area_centroid([ell])
    assert c == pytest.approx([1.0, 0.5]) and a == pytest.approx(2.0)
    lshape = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], dtype=float)
    c, a = area_centroid([lshape])
    # squares at (0.5,0.5), (1.5,0.5), (0.5,1.5)
    assert c == pytest.approx([2.5 / 3, 2.5 / 3]) and a == pytest.approx(3.0)


def test_area_centroid_degenerate():
    with pytest.raises(DegenerateGeometryError):
        area_centroid([np.array([[0, 0], [1, 1], [2, 2]], dtype=float)])
    with pytest.raises(DegenerateGeometryError):
        area_centroid([])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(FAMILIES), st.floats(-1, 1), st.floats(-1, 1),
       st.floats(-math.pi, math.pi))
def test_centroid_rigid_invariance(seed, family, x, y, th):
    p = generate_part(seed, family)
    pose = Pose(x, y, th)
    c, a = area_centroid(transform_part(p, pose))
    assert np.allclose(c, [x, y], atol=1e-10)
    assert a == pytest.approx(area_centroid(p.rings)[1], rel=1e-10)


def test_bounding_box_examples():
    sq = Part(unit_square(), (), 0.02, 1, "ngon")
    b = bounding_box(sq, Pose(0, 0, 0))
    assert (b.xmin, b.ymin, b.xmax, b.ymax) == (-0.5, -0.5, 0.5, 0.5)
    b = bounding_box(sq, Pose(0, 0, math.pi / 4))
    assert b.width == pytest.approx(math.sqrt(2), abs=1e-12)
    assert b.height == pytest.approx(math.sqrt(2), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(FAMILIES), st.floats(-0.2, 0.2), st.floats(-0.2, 0.2),
       st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
def test_bounding_box_is_vertex_scan(seed, family, x, y, th, phi):
    p = generate_part(seed, family)
    for pose in (Pose(x, y, th), Pose(*(rotation(phi) @ [x, y]), th + phi)):
        pts = np.array([pose.apply(v[None])[0] for v in p.outer_ring])
        b = bounding_box(p, pose)
        assert (b.xmin, b.ymin, b.xmax, b.ymax) == pytest.approx(
            (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()), abs=1e-15)


def test_silhouette_contains_examples():
    p = generate_part(5, "ngon")
    if p.holes:
        p = Part(p.outer_ring, (), p.height, p.part_id, p.family)
    pose = Pose(0.03, -0.02, 0.4)
    assert silhouette_contains(p, pose, (0.03, -0.02))
    b = bounding_box(p, pose)
    assert not silhouette_contains(p, pose, (0.03 + b.diagonal, -0.02))
    # boundary counts as inside
    sq = rect_part(0.04, 0.04)
    assert silhouette_contains(sq, Pose(0, 0, 0), (0.02, 0.0))
    assert silhouette_contains(sq, Pose(0, 0, 0), (0.02, 0.02))


def test_containment_matches_ray_crossing_oracle():
    rng = np.random.default_rng(0)
    total = 0
    for seed in range(4):
        for family in FAMILIES:
            p = generate_part(seed, family)
            pose = Pose(*rng.uniform(-0.1, 0.1, 2), rng.uniform(-math.pi, math.pi))
            b = bounding_box(p, pose)
            pts = np.column_stack([rng.uniform(b.xmin - 0.01, b.xmax + 0.01, 500),
                                   rng.uniform(b.ymin - 0.01, b.ymax + 0.01, 500)])
            fast = contains_points(p, pose, pts)
            world_rings = transform_part(p, pose)
            slow = np.array([ray_crossing_inside(world_rings, q) for q in pts])
            assert np.array_equal(fast, slow)
            total += len(pts)
    assert total >= 10_000


def test_wrapping_ranges():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert wrap_half(math.pi / 2) == -math.pi / 2
    assert wrap_half(-math.pi / 2) == -math.pi / 2
    assert Pose(0, 0, 4.0).theta == pytest.approx(4.0 - 2 * math.pi)


def test_corpus_is_prefix_consistent():
    assert corpus_seeds(5, 3) == corpus_seeds(9, 3)[:5]
    a, b = generate_corpus(4, 2), generate_corpus(8, 2)[:4]
    assert all(x == y for x, y in zip(a, b))
    assert [p.family for p in generate_corpus(6, 0)] == list(FAMILIES) + ["ngon"]
