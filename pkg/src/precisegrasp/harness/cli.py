"""Command-line front end.

Every subcommand reads and writes files inside ``--out`` so steps can be run
one after another::

    precisegrasp gen-parts --out run
    precisegrasp collect --out run
    precisegrasp filter --out run
    precisegrasp split --out run
    precisegrasp train-gqn --out run
    precisegrasp train-gdn --variant GCIP-M+V --out run
    precisegrasp eval-exp1 --out run
    precisegrasp eval-exp2 --out run
    precisegrasp plan --out run --part-id <id>
    precisegrasp gradcheck
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from ..dataset import CorpusStats, collect, filter_corpus, random_pose, read_dataset, select_parts, split_objectwise
from ..errors import ConfigurationError, PreciseGraspError
from ..models import VARIANTS, GdnModel, GqnModel
from ..parts import FAMILIES, corpus_seeds, generate_corpus, generate_part, part_id_for
from ..planner import Scene, plan_precise, plan_quality_only
from ..tensor.checkpoint import load_checkpoint, save_checkpoint
from .config import Config, default_config_text
from .experiments import run_experiments, write_report
from .gradcheck import run_gradcheck
from .pipeline import fit_gdn, fit_gqn, fit_lowess

log = logging.getLogger("precisegrasp")

SUBCOMMANDS = ("gen-parts", "collect", "filter", "split", "train-gqn", "train-gdn", "eval-exp1", "eval-exp2",
               "plan", "gradcheck")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file (defaults apply to missing keys)")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", help="working directory for inputs and outputs")
    p = _Parser(prog="precisegrasp", description="Synthetic pinch data, grasp networks, and planning.")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_Parser)
    sub.required = True
    sub.add_parser("gen-parts", parents=[common], help="generate the part corpus listing")
    sub.add_parser("collect", parents=[common], help="simulate random grasps on every part")
    sub.add_parser("filter", parents=[common], help="keep parts within the success-rate and size ranges")
    sub.add_parser("split", parents=[common], help="object-wise train/validation split")
    sub.add_parser("train-gqn", parents=[common], help="train the grasp quality network")
    g = sub.add_parser("train-gdn", parents=[common], help="train a grasp displacement network")
    g.add_argument("--variant", required=True, choices=VARIANTS)
    e1 = sub.add_parser("eval-exp1", parents=[common], help="experiment 1: highest predicted quality")
    e1.add_argument("--variants", help="comma-separated displacement models (default: all trained)")
    e2 = sub.add_parser("eval-exp2", parents=[common], help="experiment 2: quality pool, lowest variance")
    e2.add_argument("--variants", help="comma-separated mean-and-variance models")
    pl = sub.add_parser("plan", parents=[common], help="plan one grasp for a part in a random pose")
    pl.add_argument("--part-id", type=int, help="part to plan for (default: first validation part)")
    pl.add_argument("--variant", help="mean-and-variance model for precise planning")
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every backward pass")
    gc.add_argument("--seeds", type=int, default=5)
    sub.add_parser("show-config", parents=[common], help="print the effective configuration")
    return p


def load_config(args) -> Config:
    cfg = Config.from_text(default_config_text())
    if args.config:
        cfg = Config.from_text(open(args.config).read(), base=cfg)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    return cfg


def _out(args, cfg) -> str:
    d = args.out or cfg["output_dir"]
    os.makedirs(d, exist_ok=True)
    return d


def _read_ids(path) -> list[int]:
    with open(path) as fh:
        return [int(line.split()[0]) for line in fh if line.strip() and not line.startswith("#")]


def _read_split(path):
    train, val = [], []
    with open(path) as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                pid, tag = line.split()
                (train if tag == "train" else val).append(int(pid))
    return train, val


def _load_parts(d) -> list:
    parts = []
    with open(os.path.join(d, "parts.txt")) as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                seed, family, pid = line.split()
                part = generate_part(int(seed), family)
                if part.part_id != int(pid):
                    raise PreciseGraspError(f"parts.txt entry {line.strip()!r} does not regenerate its part id")
                parts.append(part)
    return parts


def _load_gqn(d, cfg) -> GqnModel:
    m = GqnModel(cfg["seed"], dtype=cfg.dtype())
    m.net.load_state_dict(load_checkpoint(os.path.join(d, "gqn.pgwt")))
    return m


def _load_gdn(d, cfg, variant) -> GdnModel:
    m = GdnModel(variant, dtype=cfg.dtype())
    m.net.load_state_dict(load_checkpoint(os.path.join(d, f"gdn_{variant}.pgwt")))
    return m


def _trained_variants(d) -> list[str]:
    return [v for v in VARIANTS if os.path.exists(os.path.join(d, f"gdn_{v}.pgwt"))]


def cmd_gen_parts(args, cfg, d):
    seeds = corpus_seeds(cfg["corpus.parts"], cfg["corpus.seed"])
    with open(os.path.join(d, "parts.txt"), "w") as fh:
        fh.write("# seed family part_id\n")
        for i, s in enumerate(seeds):
            fam = FAMILIES[i % len(FAMILIES)]
            fh.write(f"{s} {fam} {part_id_for(s, fam)}\n")
    print(f"wrote {len(seeds)} parts to {os.path.join(d, 'parts.txt')}")


def cmd_collect(args, cfg, d):
    parts = _load_parts(d) if os.path.exists(os.path.join(d, "parts.txt")) else \
        generate_corpus(cfg["corpus.parts"], cfg["corpus.seed"])
    path = os.path.join(d, "dataset.pgds")
    gs, manifest, stats = collect(parts, cfg["corpus.grasps_per_part"], cfg["corpus.seed"], cfg["workers"],
                                  cfg.physics(), cfg.sensor(), path)
    with open(os.path.join(d, "stats.csv"), "w") as fh:
        fh.write("part_id,success_rate,longest_axis,attempts\n")
        for s in stats:
            fh.write(f"{s.part_id},{s.success_rate!r},{s.longest_axis!r},{s.attempts}\n")
    print(f"collected {manifest['records']} records ({manifest['positives']} successful, "
          f"{manifest['divergences']} divergences) into {path}")


def cmd_filter(args, cfg, d):
    stats = []
    with open(os.path.join(d, "stats.csv")) as fh:
        next(fh)
        for line in fh:
            pid, rate, axis, n = line.strip().split(",")
            stats.append(CorpusStats(int(pid), float(rate), float(axis), int(n)))
    keep = filter_corpus(stats, (cfg["corpus.min_success_rate"], cfg["corpus.max_success_rate"]),
                         (cfg["corpus.min_axis"], cfg["corpus.max_axis"]))
    target = cfg["corpus.target_parts"]
    ordered = [s.part_id for s in stats if s.part_id in keep]
    if target > 0:
        ordered = ordered[:target]
    with open(os.path.join(d, "retained.txt"), "w") as fh:
        for pid in ordered:
            fh.write(f"{pid}\n")
    print(f"retained {len(ordered)} of {len(stats)} parts")


def cmd_split(args, cfg, d):
    ids = _read_ids(os.path.join(d, "retained.txt"))
    train, val = split_objectwise(ids, cfg["corpus.val_fraction"], cfg["seed"])
    with open(os.path.join(d, "split.txt"), "w") as fh:
        for pid in train:
            fh.write(f"{pid} train\n")
        for pid in val:
            fh.write(f"{pid} val\n")
    print(f"split {len(ids)} parts into {len(train)} train / {len(val)} val")


def _records_and_split(d):
    train, val = _read_split(os.path.join(d, "split.txt"))
    gs = read_dataset(os.path.join(d, "dataset.pgds"))
    return select_parts(gs, train + val), train, val


def cmd_train_gqn(args, cfg, d):
    gs, train, val = _records_and_split(d)
    res = fit_gqn(cfg, gs, train, val, os.path.join(d, "gqn_metrics.csv"))
    save_checkpoint(os.path.join(d, "gqn.pgwt"), res.model.net.state_dict())
    last = res.metrics[-1]
    print(f"gqn: train accuracy {last['train_accuracy']:.4f}, val accuracy {last['val_accuracy']:.4f}")


def cmd_train_gdn(args, cfg, d):
    gs, train, val = _records_and_split(d)
    gqn = _load_gqn(d, cfg) if args.variant.startswith("GCIP") and os.path.exists(os.path.join(d, "gqn.pgwt")) \
        else None
    res = fit_gdn(cfg, gs, train, val, args.variant, gqn, os.path.join(d, f"gdn_{args.variant}_metrics.csv"))
    save_checkpoint(os.path.join(d, f"gdn_{args.variant}.pgwt"), res.model.net.state_dict())
    print(f"{args.variant}: " + " ".join(f"{k}={v:.4f}" for k, v in res.metrics[-1].items() if k != "epoch"))


def _eval(args, cfg, d, quality: bool):
    gs, train, val = _records_and_split(d)
    parts = [p for p in _load_parts(d) if p.part_id in set(val)]
    gqn = _load_gqn(d, cfg)
    names = args.variants.split(",") if args.variants else _trained_variants(d)
    models = {v: _load_gdn(d, cfg, v) for v in names if v in VARIANTS}
    if "LOWESS" in names:
        # a known-object baseline: its memory holds the collection records of every evaluated part
        models["LOWESS"] = fit_lowess(gs, train + val)
    kw = dict(n=cfg["planner.candidates"], top_fraction=cfg["planner.top_fraction"], seed=cfg["eval.seed"],
              params=cfg.physics(), sensor=cfg.sensor(), noise=cfg["eval.noise"])
    if quality:
        rep, _ = run_experiments(parts, gqn, models, cfg["eval.trials_per_object"], quality=True, **kw)
        prefix = os.path.join(d, "exp1")
    else:
        precise = {k: m for k, m in models.items() if getattr(m, "has_variance", False)}
        if args.variants:
            precise = models  # an explicit M-only request is rejected with a message
        _, rep = run_experiments(parts, gqn, {}, cfg["eval.trials_per_object"], quality=False, precise=precise,
                                 **kw)
        prefix = os.path.join(d, "exp2")
    write_report(prefix, rep)
    print(rep.to_text(), end="")


def cmd_plan(args, cfg, d):
    parts = _load_parts(d)
    if args.part_id is not None:
        part = next((p for p in parts if p.part_id == args.part_id), None)
        if part is None:
            raise PreciseGraspError(f"part {args.part_id} is not in parts.txt")
    else:
        _, val = _read_split(os.path.join(d, "split.txt"))
        part = next(p for p in parts if p.part_id == val[0])
    rng = np.random.default_rng(cfg["seed"])
    scene = Scene(part, random_pose(rng), cfg["sensor.full_window"], cfg["sensor.patch_window"],
                  cfg["sensor.camera_height"])
    gqn = _load_gqn(d, cfg)
    if args.variant:
        res = plan_precise(scene, gqn, _load_gdn(d, cfg, args.variant), cfg["planner.candidates"],
                           cfg["planner.top_fraction"], cfg["seed"])
    else:
        res = plan_quality_only(scene, gqn, cfg["planner.candidates"], cfg["seed"])
    print(res.to_line())


def cmd_gradcheck(args, cfg, d):
    t = time.time()
    worst = run_gradcheck(range(cfg["seed"], cfg["seed"] + args.seeds), verbose=True)
    print(f"max relative error {worst:.3e} over {args.seeds} seeds in {time.time() - t:.1f} s")
    return 0 if worst < 1e-4 else 1


def cmd_show_config(args, cfg, d):
    print(cfg.to_text(), end="")


HANDLERS = {
    "gen-parts": cmd_gen_parts, "collect": cmd_collect, "filter": cmd_filter, "split": cmd_split,
    "train-gqn": cmd_train_gqn, "train-gdn": cmd_train_gdn,
    "eval-exp1": lambda a, c, d: _eval(a, c, d, True), "eval-exp2": lambda a, c, d: _eval(a, c, d, False),
    "plan": cmd_plan, "gradcheck": cmd_gradcheck, "show-config": cmd_show_config,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        d = _out(args, cfg) if args.command not in ("gradcheck", "show-config") else None
        status = HANDLERS[args.command](args, cfg, d)
    except PreciseGraspError as exc:
        print(f"precisegrasp {args.command}: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigurationError) else 1
    except FileNotFoundError as exc:
        print(f"precisegrasp {args.command}: error: missing input {exc.filename}", file=sys.stderr)
        return 1
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
