"""End-to-end steps shared by the command line and the acceptance suite."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from ..dataset import (GraspSet, balance_for_gqn, collect, filter_corpus, select_parts, split_objectwise,
                       successful_only)
from ..models import GdnModel, GqnModel, LowessModel, TrainConfig, init_gdn_from_gqn, train_gdn, train_gqn
from ..parts import generate_corpus
from .config import Config

log = logging.getLogger(__name__)


@dataclass
class DataBundle:
    parts: list            # retained parts, generation order
    records: GraspSet      # records of retained parts, part_id order
    stats: list            # CorpusStats of every simulated part
    manifest: dict
    train_ids: list
    val_ids: list
    simulated: int

    def parts_by_id(self, ids) -> list:
        want = set(int(i) for i in ids)
        return [p for p in self.parts if p.part_id in want]


def build_dataset(cfg: Config, path=None) -> DataBundle:
    """Generate, simulate, filter, and split the corpus described by ``cfg``.

    With ``corpus.target_parts`` > 0, parts are simulated in chunks of
    ``corpus.chunk`` (in generation order) until that many pass the filter;
    the first ``target_parts`` survivors are kept.
    """
    corpus = generate_corpus(cfg["corpus.parts"], cfg["corpus.seed"])
    target = cfg["corpus.target_parts"]
    chunk = cfg["corpus.chunk"] if target > 0 else len(corpus)
    ranges = dict(rate_range=(cfg["corpus.min_success_rate"], cfg["corpus.max_success_rate"]),
                  axis_range=(cfg["corpus.min_axis"], cfg["corpus.max_axis"]))
    sets, stats, kept, manifests = [], [], [], []
    done = 0
    while done < len(corpus) and (target <= 0 or len(kept) < target):
        batch = corpus[done:done + chunk]
        done += len(batch)
        gs, manifest, st = collect(batch, cfg["corpus.grasps_per_part"], cfg["corpus.seed"], cfg["workers"],
                                   cfg.physics(), cfg.sensor())
        ok = filter_corpus(st, **ranges)
        kept += [p for p in batch if p.part_id in ok]
        sets.append(gs)
        stats += st
        manifests.append(manifest)
    if target > 0:
        if len(kept) < target:
            log.warning("only %d of %d requested parts passed the filter", len(kept), target)
        kept = kept[:target]
    ids = [p.part_id for p in kept]
    records = select_parts(GraspSet.concat(sets), ids)
    order = np.argsort(records.part_id, kind="stable")
    records = records[order]
    train_ids, val_ids = split_objectwise(ids, cfg["corpus.val_fraction"], cfg["seed"])
    manifest = {
        "simulated_parts": done,
        "retained_parts": len(kept),
        "train_parts": len(train_ids),
        "val_parts": len(val_ids),
        "records": len(records),
        "positives": int(records.success.sum()),
        "divergences": sum(int(m["divergences"]) for m in manifests),
    }
    if path is not None:
        from ..dataset import write_dataset, write_manifest
        write_dataset(path, records)
        write_manifest(str(path) + ".manifest", {**manifest, **{k: v for k, v in manifests[0].items()
                                                              if k.startswith(("physics.", "sensor."))}})
    return DataBundle(kept, records, stats, manifest, train_ids, val_ids, done)


def gqn_arrays(gs: GraspSet, seed: int):
    bal = balance_for_gqn(gs, seed)
    return bal.gcip, bal.grasp, bal.success.astype(np.float64)


def gdn_arrays(gs: GraspSet, variant: str):
    ok = successful_only(gs)
    images = ok.gcip if variant.startswith("GCIP") else ok.ocfi
    return images, ok.grasp, ok.dg


def fit_gqn(cfg: Config, records: GraspSet, train_ids, val_ids, metrics_csv=None):
    tr = select_parts(records, train_ids)
    va = select_parts(records, val_ids)
    tcfg = TrainConfig(cfg["gqn.epochs"], cfg["gqn.batch_size"], cfg["gqn.lr"], cfg["gqn.decay"], cfg["seed"],
                       metrics_csv)
    val = gqn_arrays(va, cfg["seed"]) if va.success.any() and (~va.success).any() else None
    model = GqnModel(cfg["seed"], dtype=cfg.dtype())
    return train_gqn(gqn_arrays(tr, cfg["seed"]), val, tcfg, model)


def fit_gdn(cfg: Config, records: GraspSet, train_ids, val_ids, variant: str, gqn: GqnModel | None = None,
            metrics_csv=None):
    tr = select_parts(records, train_ids)
    va = select_parts(records, val_ids)
    tcfg = TrainConfig(cfg["gdn.epochs"], cfg["gdn.batch_size"], cfg["gdn.lr"], cfg["gdn.decay"], cfg["seed"],
                       metrics_csv)
    if gqn is not None:
        model = init_gdn_from_gqn(gqn, variant, cfg["seed"] + 1)
    else:
        model = GdnModel(variant, cfg["seed"] + 1, dtype=cfg.dtype())
    val = gdn_arrays(va, variant) if va.success.any() else None
    return train_gdn(gdn_arrays(tr, variant), variant, val, tcfg, model)


def fit_lowess(records: GraspSet, part_ids) -> LowessModel:
    ok = successful_only(select_parts(records, part_ids))
    return LowessModel.from_records(ok.part_id, ok.poses(), ok.grasp, ok.dg)


@dataclass
class PipelineResult:
    bundle: DataBundle
    gqn: GqnModel
    gdns: dict                 # variant -> GdnModel
    exp1: object               # EvalReport
    exp2: object               # EvalReport or None
    timings: dict


def run_pipeline(cfg: Config) -> PipelineResult:
    """Dataset, GQN, every configured GDN variant, then both experiments on validation parts."""
    from .experiments import run_experiments

    timings = {}
    t = time.perf_counter()
    bundle = build_dataset(cfg)
    timings["dataset"] = time.perf_counter() - t
    t = time.perf_counter()
    gqn = fit_gqn(cfg, bundle.records, bundle.train_ids, bundle.val_ids).model
    timings["gqn"] = time.perf_counter() - t
    gdns = {}
    for variant in [v.strip() for v in cfg["gdn.variants"].split(",") if v.strip()]:
        t = time.perf_counter()
        init = gqn if variant.startswith("GCIP") else None
        gdns[variant] = fit_gdn(cfg, bundle.records, bundle.train_ids, bundle.val_ids, variant, init).model
        timings[f"gdn {variant}"] = time.perf_counter() - t
    t = time.perf_counter()
    precise = {k: m for k, m in gdns.items() if m.has_variance}
    exp1, exp2 = run_experiments(bundle.parts_by_id(bundle.val_ids), gqn, gdns, cfg["eval.trials_per_object"],
                                 n=cfg["planner.candidates"], top_fraction=cfg["planner.top_fraction"],
                                 seed=cfg["eval.seed"], params=cfg.physics(), sensor=cfg.sensor(),
                                 noise=cfg["eval.noise"], precise=precise)
    timings["experiments"] = time.perf_counter() - t
    return PipelineResult(bundle, gqn, gdns, exp1, exp2, timings)
