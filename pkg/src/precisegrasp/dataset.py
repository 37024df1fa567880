"""Data collection, corpus filtering, object-wise splits, and the record container.

Container layout, little-endian::

    "PGDS"  u16 version = 1  u64 record count
    record: u64 part_id | 3 x f64 pose | 4 x f64 grasp | u8 success |
            4 x f64 object displacement | 4 x f64 grasp displacement |
            4096 x f32 full view | 4096 x f32 grasp patch | u32 CRC-32

The CRC covers the record bytes before it, so a flipped byte is reported
with the offset of the damaged record.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import struct
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import CorruptFileError, RejectedInputError, SimulationDivergence, UnbalanceableDataError
from .parts import Part, Pose, bounding_box
from .physics import Displacement, Grasp, PhysicsParams, sample_grasps, simulate_pinch
from .sensor import (CAMERA_HEIGHT, FULL_WINDOW, IMAGE_SIZE, NOISE_SIGMA, PATCH_WINDOW, DepthImage, add_noise,
                     render_full, render_grasp_patches)

log = logging.getLogger(__name__)

MAGIC = b"PGDS"
VERSION = 1
HEADER = struct.Struct("<4sHQ")
PIXELS = IMAGE_SIZE * IMAGE_SIZE

RECORD_DTYPE = np.dtype([
    ("part_id", "<u8"),
    ("pose", "<f8", (3,)),
    ("grasp", "<f8", (4,)),
    ("success", "u1"),
    ("dp", "<f8", (4,)),
    ("dg", "<f8", (4,)),
    ("ocfi", "<f4", (PIXELS,)),
    ("gcip", "<f4", (PIXELS,)),
    ("crc", "<u4"),
])
RECORD_SIZE = RECORD_DTYPE.itemsize
PAYLOAD_SIZE = RECORD_SIZE - 4


@dataclass(frozen=True)
class GraspRecord:
    part_id: int
    pose: Pose
    grasp: Grasp
    success: bool
    object_displacement: Displacement
    grasp_displacement: Displacement
    ocfi: np.ndarray
    gcip: np.ndarray


class GraspSet:
    """Columnar sequence of grasp records.

    Iterating or indexing with an integer yields :class:`GraspRecord`
    values; indexing with an array or mask yields a new ``GraspSet``.
    """

    def __init__(self, part_id, pose, grasp, success, dp, dg, ocfi, gcip):
        self.part_id = np.asarray(part_id, dtype=np.uint64)
        self.pose = np.asarray(pose, dtype=np.float64).reshape(-1, 3)
        self.grasp = np.asarray(grasp, dtype=np.float64).reshape(-1, 4)
        self.success = np.asarray(success, dtype=bool)
        self.dp = np.asarray(dp, dtype=np.float64).reshape(-1, 4)
        self.dg = np.asarray(dg, dtype=np.float64).reshape(-1, 4)
        self.ocfi = np.asarray(ocfi, dtype=np.float32).reshape(-1, IMAGE_SIZE, IMAGE_SIZE)
        self.gcip = np.asarray(gcip, dtype=np.float32).reshape(-1, IMAGE_SIZE, IMAGE_SIZE)
        n = len(self.part_id)
        for name in ("pose", "grasp", "success", "dp", "dg", "ocfi", "gcip"):
            if len(getattr(self, name)) != n:
                raise RejectedInputError(f"column {name} has {len(getattr(self, name))} rows, expected {n}")

    @classmethod
    def empty(cls) -> "GraspSet":
        return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0, bool), np.zeros((0, 4)),
                   np.zeros((0, 4)), np.zeros((0, IMAGE_SIZE, IMAGE_SIZE)), np.zeros((0, IMAGE_SIZE, IMAGE_SIZE)))

    @classmethod
    def from_records(cls, records) -> "GraspSet":
        records = list(records)
        if not records:
            return cls.empty()
        return cls(
            [r.part_id for r in records],
            [(r.pose.x, r.pose.y, r.pose.theta) for r in records],
            [r.grasp.as_array() for r in records],
            [r.success for r in records],
            [r.object_displacement.as_array() for r in records],
            [r.grasp_displacement.as_array() for r in records],
            [r.ocfi for r in records],
            [r.gcip for r in records],
        )

    @classmethod
    def concat(cls, sets) -> "GraspSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls(*(np.concatenate([getattr(s, c) for s in sets]) for c in cls.COLUMNS))

    COLUMNS = ("part_id", "pose", "grasp", "success", "dp", "dg", "ocfi", "gcip")

    def __len__(self) -> int:
        return len(self.part_id)

    def record(self, i: int) -> GraspRecord:
        p = self.pose[i]
        return GraspRecord(
            int(self.part_id[i]), Pose(*p), Grasp(*self.grasp[i]), bool(self.success[i]),
            Displacement.from_array(self.dp[i]), Displacement.from_array(self.dg[i]),
            self.ocfi[i], self.gcip[i],
        )

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return self.record(int(idx))
        return GraspSet(*(getattr(self, c)[idx] for c in self.COLUMNS))

    def __iter__(self):
        for i in range(len(self)):
            yield self.record(i)

    def poses(self) -> list[Pose]:
        return [Pose(*p) for p in self.pose]

    def equals(self, other: "GraspSet") -> bool:
        return to_bytes(self) == to_bytes(other)


# ---------------------------------------------------------------------------
# container


def _to_structured(gs: GraspSet) -> np.ndarray:
    arr = np.zeros(len(gs), dtype=RECORD_DTYPE)
    arr["part_id"] = gs.part_id
    arr["pose"] = gs.pose
    arr["grasp"] = gs.grasp
    arr["success"] = gs.success.astype(np.uint8)
    arr["dp"] = gs.dp
    arr["dg"] = gs.dg
    arr["ocfi"] = gs.ocfi.reshape(len(gs), PIXELS)
    arr["gcip"] = gs.gcip.reshape(len(gs), PIXELS)
    raw = arr.view(np.uint8).reshape(len(gs), RECORD_SIZE)
    for i in range(len(gs)):
        arr["crc"][i] = zlib.crc32(raw[i, :PAYLOAD_SIZE].tobytes())
    return arr


def to_bytes(gs: GraspSet) -> bytes:
    return HEADER.pack(MAGIC, VERSION, len(gs)) + _to_structured(gs).tobytes()


def from_bytes(data: bytes) -> GraspSet:
    if len(data) < HEADER.size:
        raise CorruptFileError("file shorter than the container header", len(data))
    magic, version, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptFileError("bad container magic", 0)
    if version != VERSION:
        raise CorruptFileError(f"unsupported container version {version}", 4)
    body = len(data) - HEADER.size
    if body != count * RECORD_SIZE:
        whole = body // RECORD_SIZE
        if body % RECORD_SIZE:
            raise CorruptFileError(
                f"header declares {count} records but the body holds {body / RECORD_SIZE:.3f}",
                HEADER.size + whole * RECORD_SIZE)
        raise CorruptFileError(f"header declares {count} records but the body holds {whole}", 6)
    arr = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=HEADER.size)
    raw = np.frombuffer(data, dtype=np.uint8, count=body, offset=HEADER.size).reshape(count, RECORD_SIZE)
    for i in range(count):
        if zlib.crc32(raw[i, :PAYLOAD_SIZE].tobytes()) != int(arr["crc"][i]):
            raise CorruptFileError(f"checksum mismatch in record {i}", HEADER.size + i * RECORD_SIZE)
    bad = np.flatnonzero(arr["success"] > 1)
    if bad.size:
        i = int(bad[0])
        raise CorruptFileError(f"record {i} has an invalid success flag",
                               HEADER.size + i * RECORD_SIZE + RECORD_DTYPE.fields["success"][1])
    return GraspSet(arr["part_id"].copy(), arr["pose"].copy(), arr["grasp"].copy(), arr["success"] == 1,
                    arr["dp"].copy(), arr["dg"].copy(), arr["ocfi"].reshape(count, IMAGE_SIZE, IMAGE_SIZE).copy(),
                    arr["gcip"].reshape(count, IMAGE_SIZE, IMAGE_SIZE).copy())


def write_dataset(path, gs: GraspSet):
    with open(path, "wb") as fh:
        fh.write(to_bytes(gs))


def read_dataset(path) -> GraspSet:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def write_manifest(path, manifest: dict):
    with open(path, "w") as fh:
        for k, v in manifest.items():
            fh.write(f"{k}={v}\n")


def read_manifest(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                k, _, v = line.partition("=")
                out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------------------
# collection


@dataclass(frozen=True)
class SensorParams:
    full_window: float = FULL_WINDOW
    patch_window: float = PATCH_WINDOW
    camera_height: float = CAMERA_HEIGHT
    noise_sigma: float = NOISE_SIGMA


@dataclass(frozen=True)
class CorpusStats:
    part_id: int
    success_rate: float
    longest_axis: float
    attempts: int = 0
    split: str = ""


def part_seed(master_seed: int, part_id: int) -> np.random.SeedSequence:
    """Per-part seed sequence; independent of corpus order."""
    words = [int(master_seed) & 0xFFFFFFFF, (int(master_seed) >> 32) & 0xFFFFFFFF,
             int(part_id) & 0xFFFFFFFF, (int(part_id) >> 32) & 0xFFFFFFFF]
    return np.random.SeedSequence(words)


def random_pose(rng: np.random.Generator, extent: float = 0.1) -> Pose:
    return Pose(rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-math.pi, math.pi))


def relative_bbox(part: Part, pose: Pose):
    return bounding_box(part, pose).shifted(-pose.x, -pose.y)


def render_observations(part: Part, pose: Pose, grasps: np.ndarray, sensor: SensorParams = SensorParams()):
    """Clean full view and clean grasp patches for each grasp row."""
    full = render_full(part, pose, sensor.full_window, sensor.camera_height)
    centers = np.column_stack([pose.x + grasps[:, 0], pose.y + grasps[:, 1]])
    rots = pose.theta + grasps[:, 3]
    patches = render_grasp_patches(part, pose, centers, rots, sensor.patch_window, sensor.camera_height)
    return full, patches


def _noisy(pixels: np.ndarray, mpp: float, sigma: float, seed: int) -> np.ndarray:
    return add_noise(DepthImage(pixels, mpp, (0.0, 0.0)), sigma, seed).pixels


def collect_part(part: Part, grasps_per_part: int, master_seed: int,
                 params: PhysicsParams = PhysicsParams(), sensor: SensorParams = SensorParams()):
    """Simulate one part.  Returns (GraspSet, divergence count)."""
    rng = np.random.default_rng(part_seed(master_seed, part.part_id))
    pose = random_pose(rng)
    grasps = sample_grasps(relative_bbox(part, pose), part.height, rng, grasps_per_part)
    noise_seeds = rng.integers(0, 2 ** 63, size=(grasps_per_part, 2))
    keep, dps, dgs, succ = [], [], [], []
    divergences = 0
    for i, g in enumerate(grasps):
        try:
            out = simulate_pinch(part, pose, Grasp(*g), params)
        except SimulationDivergence as exc:
            log.warning("dropping grasp %d of part %d: %s", i, part.part_id, exc)
            divergences += 1
            continue
        keep.append(i)
        succ.append(out.success)
        dps.append(out.object_displacement.as_array())
        dgs.append(out.grasp_displacement.as_array() if out.success else np.zeros(4))
    keep = np.asarray(keep, dtype=int)
    kept = grasps[keep]
    full, patches = render_observations(part, pose, kept, sensor)
    fm = sensor.full_window / IMAGE_SIZE
    pm = sensor.patch_window / IMAGE_SIZE
    ocfi = np.stack([_noisy(full.pixels, fm, sensor.noise_sigma, int(noise_seeds[i, 0])) for i in keep]) \
        if len(keep) else np.zeros((0, IMAGE_SIZE, IMAGE_SIZE))
    gcip = np.stack([_noisy(patches[j], pm, sensor.noise_sigma, int(noise_seeds[i, 1]))
                     for j, i in enumerate(keep)]) if len(keep) else np.zeros((0, IMAGE_SIZE, IMAGE_SIZE))
    n = len(keep)
    gs = GraspSet(np.full(n, part.part_id, dtype=np.uint64), np.tile([pose.x, pose.y, pose.theta], (n, 1)),
                  kept, np.asarray(succ, bool), np.asarray(dps).reshape(n, 4), np.asarray(dgs).reshape(n, 4),
                  ocfi, gcip)
    return gs, divergences


def _collect_job(args):
    return collect_part(*args)


def collect(corpus, grasps_per_part: int = 1000, master_seed: int = 0, workers: int = 1,
            params: PhysicsParams = PhysicsParams(), sensor: SensorParams = SensorParams(),
            path=None, manifest_path=None):
    """Simulate every part; returns (GraspSet, manifest dict, CorpusStats list).

    Records are assembled in ascending part_id order, so the output does not
    depend on corpus order or on the number of worker processes.
    """
    corpus = sorted(corpus, key=lambda p: p.part_id)
    if not corpus:
        raise RejectedInputError("cannot collect from an empty corpus")
    ids = [p.part_id for p in corpus]
    if len(set(ids)) != len(ids):
        raise RejectedInputError("corpus contains duplicate part ids")
    jobs = [(p, grasps_per_part, master_seed, params, sensor) for p in corpus]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_collect_job, jobs))
    else:
        results = [_collect_job(j) for j in jobs]
    gs = GraspSet.concat([r[0] for r in results])
    stats = []
    for part, (sub, _) in zip(corpus, results):
        rate = float(sub.success.mean()) if len(sub) else 0.0
        stats.append(CorpusStats(part.part_id, rate, part.longest_axis(), len(sub)))
    divergences = [r[1] for r in results]
    manifest = {
        "format": f"PGDS v{VERSION}",
        "master_seed": master_seed,
        "parts": len(corpus),
        "grasps_per_part": grasps_per_part,
        "attempts": len(corpus) * grasps_per_part,
        "records": len(gs),
        "positives": int(gs.success.sum()),
        "divergences": sum(divergences),
        "divergent_parts": ",".join(str(p.part_id) for p, d in zip(corpus, divergences) if d),
        "sha256": hashlib.sha256(to_bytes(gs)).hexdigest(),
    }
    for k, v in vars(params).items():
        manifest[f"physics.{k}"] = v
    for k, v in vars(sensor).items():
        manifest[f"sensor.{k}"] = v
    if path is not None:
        write_dataset(path, gs)
        write_manifest(manifest_path or os.fspath(path) + ".manifest", manifest)
    return gs, manifest, stats


def corpus_stats(gs: GraspSet, corpus) -> list[CorpusStats]:
    out = []
    for part in sorted(corpus, key=lambda p: p.part_id):
        sel = gs.part_id == np.uint64(part.part_id)
        n = int(sel.sum())
        out.append(CorpusStats(part.part_id, float(gs.success[sel].mean()) if n else 0.0, part.longest_axis(), n))
    return out


# ---------------------------------------------------------------------------
# filtering, splitting, balancing

SUCCESS_RATE_RANGE = (0.05, 0.40)
AXIS_RANGE = (0.02, 0.15)


def filter_corpus(stats, rate_range=SUCCESS_RATE_RANGE, axis_range=AXIS_RANGE) -> set:
    """Part ids whose random-grasp success rate and longest axis are in range (inclusive)."""
    lo, hi = rate_range
    alo, ahi = axis_range
    return {s.part_id for s in stats
            if lo <= s.success_rate <= hi and alo <= s.longest_axis <= ahi}


def split_objectwise(part_ids, val_fraction: float = 0.15, seed: int = 0):
    """Disjoint (train, val) sorted id lists; the val size is round(n * fraction)."""
    ids = sorted(set(int(i) for i in part_ids))
    if len(ids) < 2:
        raise RejectedInputError("an object-wise split needs at least two parts")
    if not 0.0 < val_fraction < 1.0:
        raise RejectedInputError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n_val = min(max(int(round(len(ids) * val_fraction)), 1), len(ids) - 1)
    order = np.random.default_rng(seed).permutation(len(ids))
    val = sorted(ids[i] for i in order[:n_val])
    train = sorted(ids[i] for i in order[n_val:])
    return train, val


def select_parts(gs: GraspSet, part_ids) -> GraspSet:
    ids = np.fromiter((int(i) for i in part_ids), dtype=np.uint64)
    return gs[np.isin(gs.part_id, ids)]


def balance_for_gqn(gs: GraspSet, seed: int = 0) -> GraspSet:
    """Undersample the majority class so both classes have equal counts; order kept."""
    pos = np.flatnonzero(gs.success)
    neg = np.flatnonzero(~gs.success)
    if len(pos) == 0 or len(neg) == 0:
        raise UnbalanceableDataError(f"need both classes, got {len(pos)} positive and {len(neg)} negative")
    rng = np.random.default_rng(seed)
    if len(pos) > len(neg):
        pos = rng.choice(pos, size=len(neg), replace=False)
    elif len(neg) > len(pos):
        neg = rng.choice(neg, size=len(pos), replace=False)
    return gs[np.sort(np.concatenate([pos, neg]))]


def successful_only(gs: GraspSet) -> GraspSet:
    return gs[gs.success]
