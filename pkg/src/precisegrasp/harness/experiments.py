"""The two planning experiments and their reports.

Experiment 1 executes the highest-quality candidate and scores every
displacement model on it.  Experiment 2 executes, per mean-and-variance
model, the lowest-variance member of the top-quality pool.  Both draw the
same candidates for a given (object, trial), so the quality scores are
computed once and shared.

Every report is recomputed from its raw trial log (``report_from_rows``), so
the CSV log is sufficient to reproduce the summary exactly.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ..dataset import SensorParams, random_pose
from ..errors import RejectedInputError, SimulationDivergence
from ..physics import Displacement, Grasp, PhysicsParams, grasp_frame_to_displacement, simulate_pinch, world_grasp
from ..planner import Candidates, Scene, predict_displacement, score_candidates, select_precise, select_quality_only
from .metrics import rmse_metrics

log = logging.getLogger(__name__)

ZERO = "ZERO"
LOG_FIELDS = [
    "experiment", "part_id", "trial", "model", "candidate", "quality", "pool", "V", "success", "failure",
    "true_dx", "true_dy", "true_dz", "true_dtheta", "pred_dx", "pred_dy", "pred_dz", "pred_dtheta",
]
SUMMARY_FIELDS = ["experiment", "model", "part_id", "trials", "successes", "success_rate",
                  "evaluated", "trans_rmse_cm", "rot_rmse_deg"]


@dataclass
class ModelReport:
    trials: int
    successes: int
    evaluated: int
    trans_rmse_cm: float
    rot_rmse_deg: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else float("nan")


@dataclass
class EvalReport:
    experiment: str
    models: dict = field(default_factory=dict)       # name -> ModelReport
    per_object: dict = field(default_factory=dict)   # name -> {part_id: ModelReport}
    rows: list = field(default_factory=list)
    comparison: list = field(default_factory=list)

    def summary_rows(self) -> list[dict]:
        out = []
        for name, rep in self.models.items():
            out.append(_summary_row(self.experiment, name, "all", rep))
            for pid, r in self.per_object[name].items():
                out.append(_summary_row(self.experiment, name, pid, r))
        return out

    def to_text(self) -> str:
        lines = [f"experiment {self.experiment}"]
        for name, r in self.models.items():
            lines.append(f"  {name:10s} trials={r.trials} success_rate={r.success_rate:.4f} "
                         f"evaluated={r.evaluated} trans_rmse_cm={r.trans_rmse_cm:.4f} "
                         f"rot_rmse_deg={r.rot_rmse_deg:.4f}")
        for c in self.comparison:
            lines.append("  compare " + " ".join(f"{k}={v}" for k, v in c.items()))
        return "\n".join(lines) + "\n"


def _summary_row(exp, name, pid, r: ModelReport) -> dict:
    return {"experiment": exp, "model": name, "part_id": pid, "trials": r.trials, "successes": r.successes,
            "success_rate": _fmt(r.success_rate), "evaluated": r.evaluated,
            "trans_rmse_cm": _fmt(r.trans_rmse_cm), "rot_rmse_deg": _fmt(r.rot_rmse_deg)}


def _fmt(v) -> str:
    return repr(float(v))


def _model_report(rows) -> ModelReport:
    succ = [r for r in rows if int(r["success"])]
    ev = [r for r in succ if r["pred_dx"] != ""]
    if ev:
        pred = np.array([[float(r[f"pred_{k}"]) for k in ("dx", "dy", "dz", "dtheta")] for r in ev])
        true = np.array([[float(r[f"true_{k}"]) for k in ("dx", "dy", "dz", "dtheta")] for r in ev])
        t, a = rmse_metrics(pred, true)
    else:
        t = a = float("nan")
    return ModelReport(len(rows), len(succ), len(ev), t, a)


def report_from_rows(experiment: str, rows) -> EvalReport:
    """Aggregate raw trial rows (as written to the log) into a report."""
    rows = [r for r in rows if r["experiment"] == experiment]
    rep = EvalReport(experiment, rows=rows)
    names = list(dict.fromkeys(r["model"] for r in rows))
    for name in names:
        mine = [r for r in rows if r["model"] == name]
        rep.models[name] = _model_report(mine)
        by_part = {}
        for pid in dict.fromkeys(r["part_id"] for r in mine):
            by_part[pid] = _model_report([r for r in mine if r["part_id"] == pid])
        rep.per_object[name] = by_part
    return rep


def write_rows(path, rows, fields=LOG_FIELDS):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# trials


def trial_seeds(seed: int, part_id: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(part_id) & 0xFFFFFFFF,
                                   (int(part_id) >> 32) & 0xFFFFFFFF, int(trial)])


def _noise_fn(sigma: float, rng: np.random.Generator):
    def apply(full, patches):
        return full + rng.normal(0.0, sigma, full.shape), patches + rng.normal(0.0, sigma, patches.shape)
    return apply


def trial_candidates(part, gqn, trial: int, n: int, seed: int, sensor: SensorParams, noise: bool) -> Candidates:
    ss = trial_seeds(seed, part.part_id, trial)
    pose_ss, cand_ss, noise_ss = ss.spawn(3)
    pose = random_pose(np.random.default_rng(pose_ss))
    scene = Scene(part, pose, sensor.full_window, sensor.patch_window, sensor.camera_height)
    cand_seed = int(np.random.default_rng(cand_ss).integers(2 ** 63))
    nf = _noise_fn(sensor.noise_sigma, np.random.default_rng(noise_ss)) if noise and sensor.noise_sigma > 0 else None
    return score_candidates(scene, gqn, n, cand_seed, nf)


def _execute(cands: Candidates, idx: int, params: PhysicsParams):
    scene = cands.scene
    try:
        out = simulate_pinch(scene.part, scene.pose, Grasp(*cands.grasps[idx]), params)
    except SimulationDivergence as exc:
        log.warning("trial discarded as failed: %s", exc)
        return False, "divergence", None
    return out.success, out.failure, out.object_displacement


def _predicted_dp(cands: Candidates, idx: int, dg_mu: np.ndarray) -> np.ndarray:
    scene = cands.scene
    wg = world_grasp(scene.pose, Grasp(*cands.grasps[idx]))
    return grasp_frame_to_displacement(scene.pose, Displacement.from_array(dg_mu), wg).as_array()


def _row(exp, part, trial, model, idx, quality, pool, v, success, failure, dp, pred) -> dict:
    row = {"experiment": exp, "part_id": str(part.part_id), "trial": str(trial), "model": model,
           "candidate": str(idx), "quality": _fmt(quality), "pool": str(pool), "V": "" if v is None else _fmt(v),
           "success": str(int(bool(success))), "failure": failure}
    for k, val in zip(("dx", "dy", "dz", "dtheta"), dp if dp is not None else [None] * 4):
        row[f"true_{k}"] = "" if val is None else _fmt(val)
    for k, val in zip(("dx", "dy", "dz", "dtheta"), pred if pred is not None else [None] * 4):
        row[f"pred_{k}"] = "" if val is None else _fmt(val)
    return row


def _model_knows(model, part) -> bool:
    return getattr(model, "kind", "") != "LOWESS" or model.knows(part.part_id)


def check_precise_models(models: dict):
    for name, m in models.items():
        if not getattr(m, "has_variance", False):
            raise RejectedInputError(
                f"{name} predicts no variance; experiment 2 applies only to mean-and-variance models")


def run_experiments(corpus, gqn, models: dict, trials_per_object: int = 30, n: int = 3200,
                    top_fraction: float = 0.03, seed: int = 0, params: PhysicsParams = PhysicsParams(),
                    sensor: SensorParams = SensorParams(), noise: bool = True, quality: bool = True,
                    precise: dict | None = None):
    """Run experiment 1 and/or 2 over ``corpus``; returns (report1 or None, report2 or None)."""
    precise = dict(precise or {})
    check_precise_models(precise)
    rows1, rows2 = [], []
    for part in sorted(corpus, key=lambda p: p.part_id):
        for trial in range(trials_per_object):
            cands = trial_candidates(part, gqn, trial, n, seed, sensor, noise)
            if quality:
                choice = select_quality_only(cands)
                ok, failure, dp = _execute(cands, choice.index, params)
                rows1.append(_row("quality", part, trial, ZERO, choice.index, choice.quality, 1, None, ok,
                                  failure, dp.as_array() if ok else None, np.zeros(4) if ok else None))
                for name, model in models.items():
                    if not _model_knows(model, part):
                        continue
                    pred = None
                    if ok:
                        mu, _ = predict_displacement(model, cands, np.array([choice.index]))
                        pred = _predicted_dp(cands, choice.index, mu[0])
                    rows1.append(_row("quality", part, trial, name, choice.index, choice.quality, 1, None, ok,
                                      failure, dp.as_array() if ok else None, pred))
            for name, model in precise.items():
                if not _model_knows(model, part):
                    continue
                choice = select_precise(cands, model, top_fraction)
                ok, failure, dp = _execute(cands, choice.index, params)
                pred = _predicted_dp(cands, choice.index, choice.mu.as_array()) if ok else None
                rows2.append(_row("precise", part, trial, name, choice.index, choice.quality, choice.pool_size,
                                  choice.scalar_variance, ok, failure, dp.as_array() if ok else None, pred))
    rep1 = report_from_rows("quality", rows1) if quality else None
    rep2 = report_from_rows("precise", rows2) if precise else None
    if rep1 is not None and rep2 is not None:
        rep2.comparison = compare(rep1, rep2)
    return rep1, rep2


def compare(rep1: EvalReport, rep2: EvalReport) -> list[dict]:
    out = []
    for name, r2 in rep2.models.items():
        r1 = rep1.models.get(name)
        if r1 is None:
            continue
        out.append({"model": name, "exp1_trans_cm": round(r1.trans_rmse_cm, 6),
                    "exp2_trans_cm": round(r2.trans_rmse_cm, 6), "exp1_rot_deg": round(r1.rot_rmse_deg, 6),
                    "exp2_rot_deg": round(r2.rot_rmse_deg, 6)})
    return out


def run_experiment_quality(corpus, gqn, models: dict, trials_per_object: int = 30, **kw) -> EvalReport:
    return run_experiments(corpus, gqn, models, trials_per_object, quality=True, precise=None, **kw)[0]


def run_experiment_precise(corpus, gqn, mv_models: dict, trials_per_object: int = 30, **kw) -> EvalReport:
    return run_experiments(corpus, gqn, {}, trials_per_object, quality=False, precise=mv_models, **kw)[1]


def write_report(prefix, rep: EvalReport):
    """``prefix``_trials.csv (raw log), ``prefix``_summary.csv, ``prefix``_summary.txt."""
    write_rows(f"{prefix}_trials.csv", rep.rows)
    write_rows(f"{prefix}_summary.csv", rep.summary_rows(), SUMMARY_FIELDS)
    with open(f"{prefix}_summary.txt", "w") as fh:
        fh.write(rep.to_text())
