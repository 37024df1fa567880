"""Deterministic quasi-static parallel-jaw pinch oracle.

All contact work happens in the gripper frame: origin at the grasp center,
x along the closing axis, y lateral.  The pads are segments of width
``pad_width`` centered on the x axis at x = -s/2 and x = +s/2.  Only the outer
ring can touch a pad that closes from outside, so holes are ignored here.

Stepper, per iteration:

* fewer than two contacts: the jaws close by ``step``; a pad that now
  penetrates pushes the part along the pad normal by the penetration depth and
  turns it about its centroid by ``k_rot * torque`` (unit push force at the
  contact point nearest the centroid line), capped at ``rot_cap``;
* two contacts: the jaws stop on the part, the part is centered between them
  and the pinch is examined.  A contact made by a pad corner on a slanted edge
  whose normal lies outside the friction cone squeezes the part out.  A pinch
  whose line of action leaves the cone (``|gap| > mu * width``) turns the part
  by ``k_rot * residual`` where the residual torque is the normal-force couple
  left over after the friction couple; rotations that would widen the part
  beyond the jaws are halved until they fit.

A settled pinch still fails when the jaws are nearly shut, or on lift when
the centroid hangs further than ``lift_offset_tol`` to the side of the grip
line.  Rotations use the normal-force couple only; table friction is ignored
once a pad touches the part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SimulationDivergence
from .parts import BBox, Part, Pose, rotation, wrap_angle, wrap_half


@dataclass(frozen=True)
class Grasp:
    """Top-down pinch relative to the part centroid.

    ``gx, gy`` are in the camera-aligned frame; ``gtheta`` is the closing-axis
    angle relative to the part's orientation, so the world closing axis is at
    ``pose.theta + gtheta``.
    """

    gx: float
    gy: float
    gz: float
    gtheta: float

    def __post_init__(self):
        object.__setattr__(self, "gx", float(self.gx))
        object.__setattr__(self, "gy", float(self.gy))
        object.__setattr__(self, "gz", float(self.gz))
        object.__setattr__(self, "gtheta", wrap_half(float(self.gtheta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.gx, self.gy, self.gz, self.gtheta])


@dataclass(frozen=True)
class Displacement:
    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    dtheta: float = 0.0

    def __post_init__(self):
        for name in ("dx", "dy", "dz"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "dtheta", wrap_angle(float(self.dtheta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz, self.dtheta])

    @classmethod
    def from_array(cls, a) -> "Displacement":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class WorldGrasp:
    x: float
    y: float
    z: float
    theta: float


def world_grasp(pose: Pose, grasp: Grasp) -> WorldGrasp:
    return WorldGrasp(pose.x + grasp.gx, pose.y + grasp.gy, grasp.gz, pose.theta + grasp.gtheta)


@dataclass(frozen=True)
class PhysicsParams:
    pad_width: float = 0.02
    max_opening: float = 0.08
    step: float = 0.0005
    friction: float = 0.5
    k_rot: float = 2.0
    torque_tol: float = 1e-6
    rot_cap: float = 0.02
    max_steps: int = 4000
    min_separation: float = 0.001
    lift_offset_tol: float = 0.008
    contact_tol: float = 1e-9


@dataclass(frozen=True)
class GraspOutcome:
    success: bool
    object_displacement: Displacement
    grasp_displacement: Displacement
    friction_margin: float
    contact_count: int
    failure: str = ""
    jaw_trace: tuple = field(default=(), repr=False)


# ---------------------------------------------------------------------------
# frame algebra


def displacement_to_grasp_frame(pose_before: Pose, delta_p: Displacement, grasp_world: WorldGrasp) -> Displacement:
    """Object displacement -> change of the (world-fixed) grasp seen from the object frame."""
    g = np.array([grasp_world.x, grasp_world.y])
    p = np.array([pose_before.x, pose_before.y])
    th = pose_before.theta
    a = rotation(th).T @ (g - p)
    th_after = th + delta_p.dtheta
    a_after = rotation(th_after).T @ (g - p - np.array([delta_p.dx, delta_p.dy]))
    return Displacement(
        a_after[0] - a[0],
        a_after[1] - a[1],
        -delta_p.dz,
        wrap_angle((grasp_world.theta - th_after) - (grasp_world.theta - th)),
    )


def grasp_frame_to_displacement(pose_before: Pose, delta_g: Displacement, grasp_world: WorldGrasp) -> Displacement:
    """Inverse of :func:`displacement_to_grasp_frame`."""
    g = np.array([grasp_world.x, grasp_world.y])
    p = np.array([pose_before.x, pose_before.y])
    th = pose_before.theta
    a = rotation(th).T @ (g - p)
    a_after = a + np.array([delta_g.dx, delta_g.dy])
    dtheta = -delta_g.dtheta
    th_after = th + dtheta
    p_after = g - rotation(th_after) @ a_after
    return Displacement(p_after[0] - p[0], p_after[1] - p[1], -delta_g.dz, dtheta)


# ---------------------------------------------------------------------------
# sampling


def sample_grasps(bbox: BBox, part_height: float, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` uniform grasps as an (n, 4) array of (gx, gy, gz, gtheta)."""
    gx = rng.uniform(bbox.xmin, bbox.xmax, size=n)
    gy = rng.uniform(bbox.ymin, bbox.ymax, size=n)
    gz = rng.uniform(0.0, part_height, size=n)
    gz = np.where(gz > 0.0, gz, 0.5 * part_height)
    gt = rng.uniform(-0.5 * math.pi, 0.5 * math.pi, size=n)
    return np.column_stack([gx, gy, gz, gt])


def sample_grasp(bbox: BBox, part_height: float, rng_seed: int) -> Grasp:
    """One uniform grasp; ``bbox`` is relative to the part centroid."""
    g = sample_grasps(bbox, part_height, np.random.default_rng(int(rng_seed)), 1)[0]
    return Grasp(*g)


# ---------------------------------------------------------------------------
# pinch stepper


@dataclass
class _Band:
    left: float
    right: float
    x: np.ndarray
    y: np.ndarray
    clipped: np.ndarray
    slope_dev: np.ndarray


def _band(verts: np.ndarray, half: float) -> _Band | None:
    """Clip the ring's edges to |y| <= half; candidate contact points."""
    p = verts
    q = np.roll(verts, -1, axis=0)
    y0, y1 = p[:, 1], q[:, 1]
    dx, dy = q[:, 0] - p[:, 0], y1 - y0
    flat = dy == 0.0
    safe = np.where(flat, 1.0, dy)
    ta = (-half - y0) / safe
    tb = (half - y0) / safe
    tlo = np.where(flat, 0.0, np.maximum(0.0, np.minimum(ta, tb)))
    thi = np.where(flat, 1.0, np.minimum(1.0, np.maximum(ta, tb)))
    valid = np.where(flat, np.abs(y0) <= half, tlo <= thi)
    if not valid.any():
        return None
    tlo, thi = tlo[valid], thi[valid]
    px, py, ex, ey = p[valid, 0], y0[valid], dx[valid], dy[valid]
    x = np.concatenate([px + tlo * ex, px + thi * ex])
    y = np.concatenate([py + tlo * ey, py + thi * ey])
    y = np.clip(y, -half, half)
    clipped = np.concatenate([tlo > 0.0, thi < 1.0])
    dev = np.arctan2(np.abs(ex), np.abs(ey))
    slope_dev = np.concatenate([dev, dev])
    return _Band(float(x.min()), float(x.max()), x, y, clipped, slope_dev)


def _contact(band: _Band, side: int, tol: float) -> tuple[float, float, float]:
    """(y_lo, y_hi, slope deviation) of the contact set on one side (-1 left, +1 right)."""
    if side < 0:
        sel = band.x <= band.left + tol
    else:
        sel = band.x >= band.right - tol
    ys = band.y[sel]
    clipped = band.clipped[sel]
    dev = 0.0 if (~clipped).any() else float(band.slope_dev[sel].min())
    return float(ys.min()), float(ys.max()), dev


def _nearest(lo: float, hi: float, v: float) -> float:
    return min(max(v, lo), hi)


class _PinchState:
    def __init__(self, ring0: np.ndarray, t: np.ndarray, half: float):
        self.ring0 = ring0
        self.phi = 0.0
        self.t = t.copy()
        self.half = half
        self.band = self._compute(self.phi, self.t)

    def _compute(self, phi: float, t: np.ndarray):
        verts = self.ring0 @ rotation(phi).T + t
        return _band(verts, self.half)

    def shift(self, dx: float):
        self.t[0] += dx
        if self.band is not None:
            b = self.band
            self.band = _Band(b.left + dx, b.right + dx, b.x + dx, b.y, b.clipped, b.slope_dev)

    def _snap_limit(self, direction: float) -> float:
        """Rotation magnitude at which the next edge turns parallel to the pads."""
        verts = self.ring0 @ rotation(self.phi).T
        e = np.roll(verts, -1, axis=0) - verts
        a = np.arctan2(e[:, 1], e[:, 0])
        need = np.mod(direction * (0.5 * math.pi - a), math.pi)
        need = need[need > 1e-12]
        return float(need.min()) if need.size else math.pi

    def try_rotate(self, dphi: float, sep: float, halvings: int = 30) -> bool:
        """Rotate about the centroid, halving until the part fits between the jaws.

        A rotation never carries an edge past the pad-parallel orientation; it
        stops exactly there so flush contacts are resolved exactly.
        """
        direction = math.copysign(1.0, dphi)
        dphi = direction * min(abs(dphi), self._snap_limit(direction))
        for _ in range(halvings):
            band = self._compute(self.phi + dphi, self.t)
            if band is None or band.right - band.left <= sep + 1e-12:
                self.phi += dphi
                self.band = band
                return True
            dphi *= 0.5
        return False


def _outcome(success, state, t0, psi, part, grasp, pose, margin, contacts, failure, trace):
    dt = rotation(psi) @ (state.t - t0)
    dz = 0.0
    if success:
        dz = (1.0 - margin) * min(max(0.5 * part.height - grasp.gz, -0.5 * part.height), 0.5 * part.height)
    dp = Displacement(dt[0], dt[1], dz, state.phi)
    dg = displacement_to_grasp_frame(pose, dp, world_grasp(pose, grasp))
    return GraspOutcome(success, dp, dg, float(min(max(margin, 0.0), 1.0)), contacts, failure, tuple(trace))


def simulate_pinch(part: Part, pose: Pose, grasp: Grasp, params: PhysicsParams = PhysicsParams(),
                   record_trace: bool = False) -> GraspOutcome:
    """Run the pinch stepper and report lift success and displacements."""
    psi = pose.theta + grasp.gtheta
    half = 0.5 * params.pad_width
    cone = math.atan(params.friction)
    # part frame -> gripper frame at phi = 0
    ring0 = part.outer_ring @ rotation(-grasp.gtheta).T
    t0 = -(rotation(psi).T @ np.array([grasp.gx, grasp.gy]))
    state = _PinchState(ring0, t0, half)
    s = params.max_opening
    trace = [s] if record_trace else []

    def done(success, margin, contacts, failure):
        return _outcome(success, state, t0, psi, part, grasp, pose, margin, contacts, failure, trace)

    if not 0.0 < grasp.gz < part.height:
        return done(False, 0.0, 0, "miss")
    if state.band is None:
        return done(False, 0.0, 0, "miss")
    if state.band.left < -0.5 * s or state.band.right > 0.5 * s:
        return done(False, 0.0, 0, "approach_collision")

    for _ in range(params.max_steps):
        band = state.band
        if band is None:
            # the part turned out of the pads' reach; the jaws shut on nothing
            return done(False, 0.0, 0, "miss")
        width = band.right - band.left
        if width < s - params.step:
            s -= params.step
            if record_trace:
                trace.append(s)
            pen_l = -0.5 * s - band.left
            pen_r = band.right - 0.5 * s
            side = -1 if pen_l > 0 else (1 if pen_r > 0 else 0)
            if side == 0:
                continue
            state.shift(pen_l if side < 0 else -pen_r)
            lo, hi, _ = _contact(state.band, side, params.contact_tol)
            arm = _nearest(lo, hi, state.t[1]) - state.t[1]
            torque = -arm if side < 0 else arm
            dphi = max(-params.rot_cap, min(params.rot_cap, params.k_rot * torque))
            if dphi != 0.0:
                state.try_rotate(dphi, s)
                if state.band is not None:
                    b = state.band
                    state.shift(max(0.0, -0.5 * s - b.left) - max(0.0, b.right - 0.5 * s))
            continue

        # both pads touch: the jaws stop on the part and center it
        s = min(s, width)
        if record_trace:
            trace.append(s)
        state.shift(-0.5 * (band.left + band.right))
        band = state.band
        l_lo, l_hi, l_dev = _contact(band, -1, params.contact_tol)
        r_lo, r_hi, r_dev = _contact(band, 1, params.contact_tol)
        if max(l_dev, r_dev) > cone:
            return done(False, 0.0, 2, "squeeze_out")
        if r_lo > l_hi:
            gap = r_lo - l_hi
        elif l_lo > r_hi:
            gap = r_hi - l_lo
        else:
            gap = 0.0
        line_dev = math.atan2(abs(gap), max(width, 1e-12))
        max_dev = max(line_dev, l_dev, r_dev)
        residual = math.copysign(max(0.0, abs(gap) - params.friction * width), gap)
        if abs(residual) <= params.torque_tol and max_dev <= cone:
            margin = 1.0 - max_dev / cone
            if margin <= 0.0:
                return done(False, margin, 2, "friction")
            if s <= params.min_separation:
                return done(False, margin, 2, "crushed")
            # grip line: overlap of both patches, or the segment between nearest ends
            lo, hi = (max(l_lo, r_lo), min(l_hi, r_hi)) if gap == 0.0 else sorted(
                (_nearest(l_lo, l_hi, r_lo), _nearest(r_lo, r_hi, l_hi)))
            if abs(_nearest(lo, hi, state.t[1]) - state.t[1]) > params.lift_offset_tol:
                return done(False, margin, 2, "lift_slip")
            return done(True, margin, 2, "")
        dphi = max(-params.rot_cap, min(params.rot_cap, params.k_rot * residual))
        if not state.try_rotate(dphi, s):
            return done(False, 0.0, 2, "jam")
    raise SimulationDivergence(
        f"pinch did not settle within {params.max_steps} steps (part {part.part_id})"
    )
