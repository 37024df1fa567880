import itertools
import math

import numpy as np
import pytest

from precisegrasp.errors import RejectedInputError
from precisegrasp.harness.gradcheck import SMALL_SPEC
from precisegrasp.models import GdnModel, LowessModel
from precisegrasp.parts import Pose, generate_part
from precisegrasp.physics import (Displacement, Grasp, PhysicsParams, WorldGrasp, displacement_to_grasp_frame,
                                  sample_grasps, simulate_pinch, world_grasp)
from precisegrasp.dataset import relative_bbox
from precisegrasp.planner import (Candidates, PlanResult, Scene, correct_placement, held_object_pose, plan_precise,
                                  plan_quality_only, pool_size, predict_displacement, quality_pool, scalar_variance,
                                  score_candidates, select_precise, select_quality_only)


class StubQuality:
    """Quality as a fixed function of the grasp row."""

    kind = "GQN"

    def __init__(self, fn):
        self.fn = fn

    def predict(self, patches, grasps):
        return np.array([self.fn(g) for g in np.atleast_2d(grasps)], dtype=np.float64)


class StubDisplacement:
    kind = "GCIP-M+V"
    observation = "gcip"
    has_variance = True

    def __init__(self, fn):
        self.fn = fn
        self.calls = []

    def predict(self, images, grasps):
        self.calls.append(np.array(grasps))
        var = np.array([self.fn(g) for g in grasps], dtype=np.float64)
        return np.zeros((len(grasps), 4)), var


@pytest.fixture(scope="module")
def scene():
    return Scene(generate_part(31, "lbracket"), Pose(0.01, -0.02, 0.6))


def make_candidates(scene, quality, grasps=None):
    n = len(quality)
    if grasps is None:
        grasps = np.column_stack([np.linspace(-0.01, 0.01, n), np.zeros(n), np.full(n, 0.005), np.zeros(n)])
    return Candidates(scene, np.asarray(grasps, float), np.zeros((n, 64, 64)), np.zeros((64, 64)),
                      np.asarray(quality, float))


def test_pool_size():
    assert pool_size(3200, 0.03) == 96
    assert pool_size(1000, 0.03) == 30
    assert pool_size(10, 0.03) == 1
    assert pool_size(5, 1.0) == 5
    assert pool_size(101, 0.03) == 4


def test_quality_pool_order_and_ties():
    q = np.array([0.2, 0.9, 0.9, 0.1, 0.9, 0.5])
    assert list(quality_pool(q, 0.5)) == [1, 2, 4]
    assert list(quality_pool(q, 0.8)) == [1, 2, 4, 5, 0]


def test_constant_quality_selects_first(scene):
    cands = make_candidates(scene, np.full(50, 0.7))
    assert select_quality_only(cands).index == 0


def test_quality_only_is_argmax(scene):
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = rng.random(200).round(2)
        cands = make_candidates(scene, q)
        r = select_quality_only(cands)
        assert r.quality == q.max() and r.index == int(np.flatnonzero(q == q.max())[0])
        assert r.mu is None and r.var is None and r.pool_size == 1


def test_precise_minimizes_scalar_variance_in_pool(scene):
    rng = np.random.default_rng(1)
    rim = scene.rim_scale()
    for trial in range(10):
        n = 300
        q = rng.random(n)
        var_table = rng.uniform(1e-6, 1e-4, (n, 4))
        grasps = np.column_stack([np.arange(n), np.zeros((n, 2)), np.zeros(n)])   # gx carries the row index
        gdn = StubDisplacement(lambda g: var_table[int(g[0])])
        cands = make_candidates(scene, q, grasps)
        r = select_precise(cands, gdn, 0.05)
        pool = np.argsort(-q)[:15]
        # exhaustive check over the pool
        best = min(pool, key=lambda i: (var_table[i, :3].sum() + rim ** 2 * var_table[i, 3], i))
        assert r.index == best and r.pool_size == 15
        assert r.scalar_variance == pytest.approx(var_table[best, :3].sum() + rim ** 2 * var_table[best, 3])
        assert all(r.scalar_variance <= scalar_variance(var_table[i], rim)[0] for i in pool)
        assert sorted(gdn.calls[0][:, 0].astype(int)) == list(gdn.calls[0][:, 0].astype(int))


def test_equal_variance_picks_lowest_pool_index(scene):
    q = np.array([0.1, 0.95, 0.3, 0.99, 0.97, 0.2])
    gdn = StubDisplacement(lambda g: np.full(4, 1e-5))
    r = select_precise(make_candidates(scene, q), gdn, 0.5)
    assert r.index == 1


def test_pool_monotonicity(scene):
    # a larger pool can only lower (or keep) the chosen scalar variance
    rng = np.random.default_rng(2)
    n = 400
    q = rng.random(n)
    var_table = rng.uniform(1e-6, 1e-4, (n, 4))
    grasps = np.column_stack([np.arange(n), np.zeros((n, 3))])
    cands = make_candidates(scene, q, grasps)
    vs = [select_precise(cands, StubDisplacement(lambda g: var_table[int(g[0])]), f).scalar_variance
          for f in (0.01, 0.03, 0.1, 0.3, 1.0)]
    assert all(a >= b for a, b in zip(vs, vs[1:]))


def test_scalar_variance_scaling():
    v = np.array([[1.0, 2.0, 3.0, 4.0]])
    assert scalar_variance(v, 0.5)[0] == 1 + 2 + 3 + 0.25 * 4
    # doubling the rim quadruples the angular contribution
    assert scalar_variance(v, 1.0)[0] - 6 == 4 * (scalar_variance(v, 0.5)[0] - 6)
    assert scalar_variance(2 * v, 0.5)[0] == 2 * scalar_variance(v, 0.5)[0]


def test_mean_only_model_rejected(scene):
    cands = make_candidates(scene, np.ones(4))
    with pytest.raises(RejectedInputError):
        select_precise(cands, GdnModel("GCIP-M", spec=SMALL_SPEC))


def test_scoring_is_deterministic(scene):
    gqn = StubQuality(lambda g: 1.0 / (1.0 + abs(g[0]) + abs(g[1])))
    a = score_candidates(scene, gqn, 200, seed=3)
    b = score_candidates(scene, gqn, 200, seed=3)
    assert np.array_equal(a.grasps, b.grasps) and np.array_equal(a.patches, b.patches)
    assert a.patches.shape == (200, 64, 64) and a.full.shape == (64, 64)
    c = score_candidates(scene, gqn, 200, seed=4)
    assert not np.array_equal(a.grasps, c.grasps)
    rb = scene.relative_bbox()
    assert np.all((a.grasps[:, 0] >= rb.xmin) & (a.grasps[:, 0] <= rb.xmax))
    assert plan_quality_only(scene, gqn, 200, 3) == plan_quality_only(scene, gqn, 200, 3)


def test_full_candidate_count(scene):
    gqn = StubQuality(lambda g: g[2])
    gdn = StubDisplacement(lambda g: np.array([g[0] ** 2, g[1] ** 2, 1e-6, 1e-3]))
    r = plan_precise(scene, gqn, gdn, 3200, 0.03, seed=0)
    assert r.candidate_count == 3200 and r.pool_size == 96
    assert len(gdn.calls[0]) == 96


def test_lowess_candidates_use_part_frame(scene):
    cands = make_candidates(scene, np.ones(3))
    stored = np.array([[0.0, 0.0, 0.005, 0.0]])
    m = LowessModel({scene.part.part_id: (stored, np.array([[0.001, 0, 0, 0]]))})
    mu, var = predict_displacement(m, cands, np.arange(3))
    assert mu.shape == (3, 4) and np.allclose(mu[:, 0], 0.001)
    assert np.all(var == 0)


def test_plan_result_line_round_trip(scene):
    gdn = StubDisplacement(lambda g: np.array([1e-6, 2e-6, 3e-6, 4e-4]))
    r = select_precise(make_candidates(scene, np.linspace(0, 1, 40)), gdn, 0.1)
    d = PlanResult.parse_line(r.to_line())
    assert int(d["index"]) == r.index and int(d["pool"]) == 4 and int(d["candidates"]) == 40
    assert float(d["gx"]) == pytest.approx(r.grasp.gx, rel=1e-8)
    assert float(d["var_theta"]) == pytest.approx(4e-4) and float(d["V"]) == pytest.approx(r.scalar_variance)
    q = PlanResult.parse_line(select_quality_only(make_candidates(scene, np.ones(3))).to_line())
    assert "V" not in q and "mu_x" not in q


def test_correct_placement_identity():
    target = Pose(0.3, -0.1, 0.4)
    g = correct_placement(target, Displacement())
    assert (g.x, g.y, g.theta) == pytest.approx((0.3, -0.1, 0.4))


def test_correct_placement_yaw_offset():
    target = Pose(0.0, 0.0, 0.0)
    g = correct_placement(target, Displacement(0.0, 0.0, 0.0, -0.1))
    # the part turned by +0.1 in the hand (grasp displacement -0.1), so release 0.1 short
    assert g.theta == pytest.approx(-0.1)


def _compose(pose, dp):
    return Pose(pose.x + dp.dx, pose.y + dp.dy, pose.theta + dp.dtheta)


def _relative(a: WorldGrasp, b: Pose):
    """b expressed in the frame of gripper a."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta


def _release(g: WorldGrasp, rel):
    c, s = math.cos(g.theta), math.sin(g.theta)
    return Pose(g.x + c * rel[0] - s * rel[1], g.y + s * rel[0] + c * rel[1], g.theta + rel[2])


def test_closed_loop_placement_is_exact():
    """Pick with a known displacement, release at the corrected pose, land on target."""
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(2000):
        pose = Pose(*rng.uniform(-0.2, 0.2, 2), rng.uniform(-math.pi, math.pi))
        # closing angles relative to the part live in [-pi/2, pi/2) (jaw symmetry)
        wg = WorldGrasp(pose.x + rng.uniform(-0.03, 0.03), pose.y + rng.uniform(-0.03, 0.03), 0.01,
                        pose.theta + rng.uniform(-math.pi / 2, math.pi / 2))
        dp = Displacement(*rng.uniform(-0.01, 0.01, 2), 0.0, rng.uniform(-0.5, 0.5))
        dg = displacement_to_grasp_frame(pose, dp, wg)
        held = _relative(wg, _compose(pose, dp))
        a = pose.inverse_apply(np.array([[wg.x, wg.y]]))[0]
        planned = Grasp(a[0], a[1], wg.z, wg.theta - pose.theta)
        target = Pose(*rng.uniform(-0.3, 0.3, 2), rng.uniform(-math.pi, math.pi))
        release = correct_placement(target, dg, planned)
        placed = _release(release, held)
        worst = max(worst, abs(placed.x - target.x), abs(placed.y - target.y),
                    abs(math.remainder(placed.theta - target.theta, 2 * math.pi)))
        back = held_object_pose(release, dg, planned)
        assert (back.x, back.y) == pytest.approx((target.x, target.y), abs=1e-12)
    assert worst < 1e-9


def test_closed_loop_with_simulated_pinches():
    params = PhysicsParams()
    rng = np.random.default_rng(6)
    done = 0
    for i in range(40):
        part = generate_part(100 + i, "ellipse" if i % 2 else "lbracket")
        pose = Pose(*rng.uniform(-0.1, 0.1, 2), rng.uniform(-math.pi, math.pi))
        g = Grasp(*sample_grasps(relative_bbox(part, pose), part.height, rng, 1)[0])
        out = simulate_pinch(part, pose, g, params)
        if not out.success:
            continue
        wg = world_grasp(pose, g)
        held = _relative(wg, _compose(pose, out.object_displacement))
        a = pose.inverse_apply(np.array([[wg.x, wg.y]]))[0]
        planned = Grasp(a[0], a[1], wg.z, wg.theta - pose.theta)
        target = Pose(0.25, -0.05, 1.1)
        placed = _release(correct_placement(target, out.grasp_displacement, planned), held)
        assert abs(placed.x - target.x) < 1e-9 and abs(placed.y - target.y) < 1e-9
        assert abs(math.remainder(placed.theta - target.theta, 2 * math.pi)) < 1e-9
        done += 1
    assert done >= 5


def test_exhaustive_small_pool(scene):
    # every ordering of three variances: the minimum wins
    for perm in itertools.permutations([1e-6, 2e-6, 3e-6]):
        table = {0.0: perm[0], 1.0: perm[1], 2.0: perm[2]}
        gdn = StubDisplacement(lambda g: np.array([table[g[0]], 0, 0, 0]))
        grasps = np.column_stack([[0.0, 1.0, 2.0, 3.0], np.zeros((4, 3))])
        r = select_precise(make_candidates(scene, [0.9, 0.8, 0.7, 0.1], grasps), gdn, 0.75)
        assert r.index == int(np.argmin(perm))
