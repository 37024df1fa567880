"""Top-down orthographic depth rendering, noise, and image standardization.

Image convention: row ``i`` grows along the view's -y axis and column ``j``
along its +x axis.  Pixel (i, j) of a view with side ``S`` centered at ``c`` and
rotated by ``r`` samples the world point ``c + R(r) [(j + 0.5 - 32) m,
(31.5 - i) m]`` where ``m = S / 64``.

Full views are exact per-pixel silhouette tests.  Grasp patches are rotated,
so they are bilinearly resampled from a world-fixed lattice whose nodes sit
at ``((k + 0.5) m, (l + 0.5) m)``; patches drawn for many grasps in one scene
share that lattice and are bit-identical to patches rendered one at a time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .parts import Part, Pose, contains_points

IMAGE_SIZE = 64
FULL_WINDOW = 0.30
PATCH_WINDOW = 0.15
CAMERA_HEIGHT = 0.7
NOISE_SIGMA = 0.003

_HALF = IMAGE_SIZE / 2.0
_U = np.arange(IMAGE_SIZE) + 0.5 - _HALF  # column offsets, in pixels
_V = _HALF - (np.arange(IMAGE_SIZE) + 0.5)  # row offsets, in pixels


@dataclass(frozen=True)
class DepthImage:
    pixels: np.ndarray
    meters_per_pixel: float
    center_world: tuple
    rotation_world: float = 0.0


def _check_camera(part: Part | None, camera_height: float, window_side: float):
    if window_side <= 0:
        raise ConfigurationError(f"window side must be positive, got {window_side}")
    if part is not None and camera_height <= part.height:
        raise ConfigurationError(
            f"camera height {camera_height} is not above the part top ({part.height})"
        )


def pixel_world_points(center, mpp: float) -> np.ndarray:
    """World coordinates of every pixel center of an unrotated view, shape (64, 64, 2)."""
    xs = center[0] + _U * mpp
    ys = center[1] + _V * mpp
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def render_full(
    part: Part | None,
    pose: Pose,
    window_side: float = FULL_WINDOW,
    camera_height: float = CAMERA_HEIGHT,
) -> DepthImage:
    """Object-centric full view centered on the part's centroid."""
    _check_camera(part, camera_height, window_side)
    mpp = window_side / IMAGE_SIZE
    center = (pose.x, pose.y)
    pix = np.full((IMAGE_SIZE, IMAGE_SIZE), float(camera_height))
    if part is not None:
        pts = pixel_world_points(center, mpp).reshape(-1, 2)
        mask = contains_points(part, pose, pts).reshape(IMAGE_SIZE, IMAGE_SIZE)
        pix[mask] = camera_height - part.height
    return DepthImage(pix, mpp, center, 0.0)


def _lattice_coords(centers: np.ndarray, rotations: np.ndarray, mpp: float) -> tuple[np.ndarray, np.ndarray]:
    """Fractional lattice coordinates of patch samples, each (n, 64, 64)."""
    c = np.cos(rotations)[:, None, None]
    s = np.sin(rotations)[:, None, None]
    u = _U[None, None, :]
    v = _V[None, :, None]
    fx = centers[:, 0, None, None] / mpp + (c * u - s * v) - 0.5
    fy = centers[:, 1, None, None] / mpp + (s * u + c * v) - 0.5
    return fx, fy


class HeightLattice:
    """Analytic height field rasterised on a lattice anchored at the part pose.

    Node (kx, ky) sits at ``(pose.x, pose.y) + ((kx + 0.5) mpp, (ky + 0.5) mpp)``,
    the same points a full view samples, so an unrotated patch centered on
    the part reproduces the full view exactly.
    """

    def __init__(self, part: Part | None, pose: Pose, mpp: float, camera_height: float,
                 kx0: int, ky0: int, kx1: int, ky1: int):
        self.mpp = mpp
        self.kx0, self.ky0 = kx0, ky0
        self.camera_height = camera_height
        kx = np.arange(kx0, kx1 + 1)
        ky = np.arange(ky0, ky1 + 1)
        gx, gy = np.meshgrid(pose.x + (kx + 0.5) * mpp, pose.y + (ky + 0.5) * mpp)
        values = np.full(gx.shape, float(camera_height))
        if part is not None:
            pts = np.column_stack([gx.ravel(), gy.ravel()])
            mask = contains_points(part, pose, pts).reshape(gx.shape)
            values[mask] = camera_height - part.height
        self.values = values

    @classmethod
    def covering(cls, part, pose, fx, fy, mpp, camera_height):
        return cls(part, pose, mpp, camera_height,
                   int(np.floor(fx.min())), int(np.floor(fy.min())),
                   int(np.floor(fx.max())) + 1, int(np.floor(fy.max())) + 1)

    def sample(self, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
        x0 = np.floor(fx)
        y0 = np.floor(fy)
        ax = fx - x0
        ay = fy - y0
        ix = x0.astype(np.int64) - self.kx0
        iy = y0.astype(np.int64) - self.ky0
        v = self.values
        v00 = v[iy, ix]
        v01 = v[iy, ix + 1]
        v10 = v[iy + 1, ix]
        v11 = v[iy + 1, ix + 1]
        # difference form: exact wherever the four nodes agree
        return v00 + ax * (v01 - v00) + ay * (v10 - v00) + ax * ay * (v11 - v01 - v10 + v00)


def render_grasp_patches(
    part: Part | None,
    pose: Pose,
    centers: np.ndarray,
    rotations: np.ndarray,
    window_side: float = PATCH_WINDOW,
    camera_height: float = CAMERA_HEIGHT,
) -> np.ndarray:
    """Batch of grasp-aligned patches, shape (n, 64, 64).

    ``centers`` are world grasp centers and ``rotations`` the world angles of
    the closing axis.
    """
    _check_camera(part, camera_height, window_side)
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    rotations = np.atleast_1d(np.asarray(rotations, dtype=np.float64))
    mpp = window_side / IMAGE_SIZE
    fx, fy = _lattice_coords(centers - np.array([pose.x, pose.y]), rotations, mpp)
    lattice = HeightLattice.covering(part, pose, fx, fy, mpp, camera_height)
    return lattice.sample(fx, fy)


def grasp_world(pose: Pose, grasp) -> tuple[np.ndarray, float]:
    """World grasp center and world closing-axis angle."""
    return np.array([pose.x + grasp.gx, pose.y + grasp.gy]), pose.theta + grasp.gtheta


def render_grasp_patch(
    part: Part | None,
    pose: Pose,
    grasp,
    window_side: float = PATCH_WINDOW,
    camera_height: float = CAMERA_HEIGHT,
) -> DepthImage:
    """Grasp-centric patch whose x axis runs along the gripper closing axis."""
    center, rot = grasp_world(pose, grasp)
    pix = render_grasp_patches(part, pose, center[None, :], np.array([rot]), window_side, camera_height)[0]
    return DepthImage(pix, window_side / IMAGE_SIZE, (float(center[0]), float(center[1])), rot)


def add_noise(img: DepthImage, sigma: float = NOISE_SIGMA, noise_seed: int = 0) -> DepthImage:
    """Independent zero-mean Gaussian noise on every pixel, seeded."""
    if sigma < 0:
        raise ConfigurationError("noise sigma must be non-negative")
    if sigma == 0:
        return DepthImage(img.pixels.copy(), img.meters_per_pixel, img.center_world, img.rotation_world)
    rng = np.random.default_rng(int(noise_seed))
    noisy = img.pixels + rng.normal(0.0, sigma, size=img.pixels.shape)
    return DepthImage(noisy, img.meters_per_pixel, img.center_world, img.rotation_world)


def standardize(img) -> np.ndarray:
    """Subtract the mean and divide by the standard deviation.

    Images with standard deviation at or below 1e-9 only get the mean removed.
    Accepts a ``DepthImage``, a single grid, or a stack of grids (last two
    axes are the image).
    """
    x = img.pixels if isinstance(img, DepthImage) else np.asarray(img, dtype=np.float64)
    # shift by one pixel first so a constant image centers to exact zeros
    ref = x[..., :1, :1]
    centered = x - ref
    centered = centered - centered.mean(axis=(-2, -1), keepdims=True)
    std = np.sqrt((centered * centered).mean(axis=(-2, -1), keepdims=True))
    safe = np.where(std > 1e-9, std, 1.0)
    return centered / safe
