"""Grasp selection by predicted quality and predicted displacement variance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RejectedInputError
from .parts import Part, Pose, bounding_box, rotation, wrap_angle
from .physics import Displacement, Grasp, WorldGrasp, sample_grasps
from .sensor import CAMERA_HEIGHT, FULL_WINDOW, PATCH_WINDOW, render_full, render_grasp_patches
from .models import object_frame_grasps


@dataclass(frozen=True)
class Scene:
    part: Part
    pose: Pose
    full_window: float = FULL_WINDOW
    patch_window: float = PATCH_WINDOW
    camera_height: float = CAMERA_HEIGHT

    def bbox(self):
        return bounding_box(self.part, self.pose)

    def relative_bbox(self):
        return self.bbox().shifted(-self.pose.x, -self.pose.y)

    def rim_scale(self) -> float:
        """Meters per radian used to compare angular and linear variance."""
        return 0.5 * self.bbox().diagonal


@dataclass
class Candidates:
    """Sampled grasps of one scene with their observations and quality scores."""

    scene: Scene
    grasps: np.ndarray
    patches: np.ndarray
    full: np.ndarray
    quality: np.ndarray


@dataclass(frozen=True)
class PlanResult:
    grasp: Grasp
    index: int
    quality: float
    mu: Displacement | None
    var: tuple | None
    candidate_count: int
    pool_size: int
    scalar_variance: float | None = None

    def to_line(self) -> str:
        g = self.grasp
        fields = [
            ("index", self.index), ("quality", f"{self.quality:.9g}"),
            ("gx", f"{g.gx:.9g}"), ("gy", f"{g.gy:.9g}"), ("gz", f"{g.gz:.9g}"), ("gtheta", f"{g.gtheta:.9g}"),
            ("candidates", self.candidate_count), ("pool", self.pool_size),
        ]
        if self.mu is not None:
            fields += [(f"mu_{k}", f"{v:.9g}") for k, v in zip(("x", "y", "z", "theta"), self.mu.as_array())]
        if self.var is not None:
            fields += [(f"var_{k}", f"{v:.9g}") for k, v in zip(("x", "y", "z", "theta"), self.var)]
            fields.append(("V", f"{self.scalar_variance:.9g}"))
        return " ".join(f"{k}={v}" for k, v in fields)

    @staticmethod
    def parse_line(line: str) -> dict:
        return dict(tok.split("=", 1) for tok in line.split())


def pool_size(n: int, top_fraction: float = 0.03) -> int:
    # round first so that e.g. 0.03 * 3200 is not pushed to 97 by representation error
    return max(1, min(n, math.ceil(round(top_fraction * n, 9))))


def quality_pool(quality: np.ndarray, top_fraction: float = 0.03) -> np.ndarray:
    """Indices of the top-scoring candidates: score descending, index ascending."""
    order = np.argsort(-np.asarray(quality, dtype=np.float64), kind="stable")
    return order[:pool_size(len(quality), top_fraction)]


def scalar_variance(var: np.ndarray, rim: float) -> np.ndarray:
    var = np.atleast_2d(var)
    return var[:, 0] + var[:, 1] + var[:, 2] + rim * rim * var[:, 3]


def sample_candidates(scene: Scene, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return sample_grasps(scene.relative_bbox(), scene.part.height, rng, n)


def observe(scene: Scene, grasps: np.ndarray):
    full = render_full(scene.part, scene.pose, scene.full_window, scene.camera_height).pixels
    centers = np.column_stack([scene.pose.x + grasps[:, 0], scene.pose.y + grasps[:, 1]])
    patches = render_grasp_patches(scene.part, scene.pose, centers, scene.pose.theta + grasps[:, 3],
                                   scene.patch_window, scene.camera_height)
    return full, patches


def score_candidates(scene: Scene, gqn, n: int = 3200, seed: int = 0, noise=None) -> Candidates:
    """Sample, render, and score ``n`` candidate grasps.

    ``noise`` optionally maps (full, patches) to noisy copies before scoring.
    """
    grasps = sample_candidates(scene, n, seed)
    full, patches = observe(scene, grasps)
    if noise is not None:
        full, patches = noise(full, patches)
    return Candidates(scene, grasps, patches, full, gqn.predict(patches, grasps))


def predict_displacement(model, cands: Candidates, idx: np.ndarray, part_id: int | None = None):
    """(mu, var) part-frame grasp displacement predictions for candidate rows ``idx``."""
    g = cands.grasps[idx]
    if getattr(model, "kind", "") == "LOWESS":
        pid = cands.scene.part.part_id if part_id is None else part_id
        return model.predict(pid, object_frame_grasps(cands.scene.pose, g), with_variance=True)
    images = cands.patches[idx] if model.observation == "gcip" else np.repeat(cands.full[None], len(idx), axis=0)
    return model.predict(images, g)


def _result(cands, i, mu=None, var=None, pool=1, v=None) -> PlanResult:
    return PlanResult(Grasp(*cands.grasps[i]), int(i), float(cands.quality[i]),
                      None if mu is None else Displacement.from_array(mu),
                      None if var is None else tuple(float(x) for x in var),
                      len(cands.grasps), pool, v)


def select_quality_only(cands: Candidates) -> PlanResult:
    # np.argmax returns the first maximum, i.e. the lowest candidate index
    return _result(cands, int(np.argmax(cands.quality)))


def select_precise(cands: Candidates, gdn, top_fraction: float = 0.03, part_id: int | None = None) -> PlanResult:
    if not getattr(gdn, "has_variance", False):
        raise RejectedInputError(f"{getattr(gdn, 'kind', type(gdn).__name__)} predicts no variance; "
                                 "variance-aware planning needs a mean-and-variance model")
    pool = np.sort(quality_pool(cands.quality, top_fraction))
    mu, var = predict_displacement(gdn, cands, pool, part_id)
    v = scalar_variance(var, cands.scene.rim_scale())
    k = int(np.argmin(v))
    return _result(cands, pool[k], mu[k], var[k], len(pool), float(v[k]))


def plan_quality_only(scene: Scene, gqn, n: int = 3200, seed: int = 0) -> PlanResult:
    """Highest predicted quality among ``n`` uniform candidates."""
    return select_quality_only(score_candidates(scene, gqn, n, seed))


def plan_precise(scene: Scene, gqn, gdn_mv, n: int = 3200, top_fraction: float = 0.03, seed: int = 0) -> PlanResult:
    """Lowest scalarized predicted variance within the top-quality pool."""
    return select_precise(score_candidates(scene, gqn, n, seed), gdn_mv, top_fraction)


def correct_placement(target: Pose, mu: Displacement, grasp: Grasp | None = None) -> WorldGrasp:
    """Gripper release pose that puts the part, not the gripper, on ``target``.

    ``grasp`` is the planned grasp in the part frame (translation rotated into
    the part's axes, angle relative to the part); it defaults to the centroid
    grasp at zero angle.  ``mu`` is the predicted grasp displacement, so the
    realized grasp is ``grasp + mu`` and the commanded yaw is offset by
    ``mu.dtheta``, the negative of the predicted part rotation.
    """
    a = np.zeros(2) if grasp is None else np.array([grasp.gx, grasp.gy])
    alpha = 0.0 if grasp is None else grasp.gtheta
    gz = 0.0 if grasp is None else grasp.gz
    a_real = a + np.array([mu.dx, mu.dy])
    p = np.array([target.x, target.y]) + rotation(target.theta) @ a_real
    return WorldGrasp(float(p[0]), float(p[1]), gz + mu.dz, wrap_angle(target.theta + alpha + mu.dtheta))


def held_object_pose(gripper: WorldGrasp, realized: Grasp | Displacement, grasp: Grasp | None = None) -> Pose:
    """Pose of a part held with realized part-frame grasp ``grasp + realized``."""
    a = np.zeros(2) if grasp is None else np.array([grasp.gx, grasp.gy])
    alpha = 0.0 if grasp is None else grasp.gtheta
    arr = realized.as_array()
    a_real = a + arr[:2]
    theta = gripper.theta - alpha - arr[3]
    p = np.array([gripper.x, gripper.y]) - rotation(theta) @ a_real
    return Pose(float(p[0]), float(p[1]), theta)
