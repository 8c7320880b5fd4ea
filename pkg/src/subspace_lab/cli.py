"""Command-line entry point: ``subspace-lab <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, models
from .harness import AttackSpec, ExperimentPlan, PlanError


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _subsets(text):
    # "0;0,1;0,1,2" -> [(0,), (0, 1), (0, 1, 2)]
    return [tuple(int(i) for i in part.split(",")) for part in text.split(";") if part]


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="plan/training seed override")
    p.add_argument("--budget", type=int, default=None, help="query budget override for every attack")
    p.add_argument("--epsilon", type=float, default=None, help="L-inf radius override for every attack")
    p.add_argument("--out-dir", type=Path, default=None, help="output directory (default: next to the plan)")
    p.add_argument("--workers", type=int, default=1, help="worker processes for image-level parallelism")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subspace-lab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="train the desk-scale zoo and write plan.json")
    _common(p)
    p.add_argument("--images", type=int, default=200)
    p.add_argument("--no-full-split", action="store_true", help="skip the full-split reference set")

    p = sub.add_parser("train", help="train one model on a named split")
    _common(p)
    p.add_argument("arch", choices=models.ARCHITECTURES)
    p.add_argument("--split", default="victim_train", choices=("victim_train", "reference_train"))
    p.add_argument("--out", type=Path, required=True, help="model file stem")
    p.add_argument("--plan", type=Path, help="take dataset and split recipe from this plan")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)

    p = sub.add_parser("attack", help="run every attack of a plan")
    _common(p)
    p.add_argument("plan", type=Path)

    p = sub.add_parser("sweep-dim", help="random-subspace failure rate over subspace sizes")
    _common(p)
    p.add_argument("plan", type=Path)
    p.add_argument("--m", default="25,100,400,n", help="comma-separated sizes; 'n' for the full dimension")

    p = sub.add_parser("residual", help="projection residuals of victim gradients")
    _common(p)
    p.add_argument("plan", type=Path)
    p.add_argument("--references", default=None, help="comma-separated reference indices, deep to shallow")
    p.add_argument("--reference-set", default=None)
    p.add_argument("--p", type=float, default=0.0, help="drop ratio for the prior gradients")

    p = sub.add_parser("ablate-dropout", help="p_max x training-set ablation")
    _common(p)
    p.add_argument("plan", type=Path)
    p.add_argument("--p-max", default="0,0.2,0.5")
    p.add_argument("--sets", default=None, help="comma-separated reference set names")

    p = sub.add_parser("ablate-refs", help="reference-subset ablation with the full-subspace variant")
    _common(p)
    p.add_argument("plan", type=Path)
    p.add_argument("--subsets", required=True, help="e.g. '0;0,1;0,1,2'")
    p.add_argument("--reference-set", default=None)

    p = sub.add_parser("grid", help="delta x tau x eta_g sweep of the subspace attack")
    _common(p)
    p.add_argument("plan", type=Path)
    p.add_argument("--delta", default="0.1")
    p.add_argument("--tau", default="0.1,1")
    p.add_argument("--eta-g", default="0.1,1,100")
    return parser


def _load(args):
    plan = ExperimentPlan.load(args.plan).with_overrides(args.seed, args.budget, args.epsilon)
    out_dir = args.out_dir or plan.base_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    return plan, out_dir


def _base_attack(plan):
    for a in plan.attacks:
        if a.kind == "subspace":
            return a
    cfg = harness.desk_attack_config()
    overrides = plan.attacks[0].config if plan.attacks else cfg
    return AttackSpec("subspace", "subspace", cfg.replace(budget=overrides.budget, epsilon=overrides.epsilon))


def _emit(rows, path):
    harness.write_table(rows, path)
    for row in rows:
        print(json.dumps(row))
    print(f"wrote {path}")


def cmd_prepare(args):
    out_dir = args.out_dir or Path("desk-lab")
    plan = harness.prepare_desk_lab(out_dir, images=args.images, seed=args.seed or 0,
                                    full_split_references=not args.no_full_split)
    plan = plan.with_overrides(None, args.budget, args.epsilon)
    plan.save(out_dir / "plan.json")
    print(f"wrote {out_dir / 'plan.json'}")


def cmd_train(args):
    if args.plan:
        plan = ExperimentPlan.load(args.plan)
        splits = harness.plan_splits(plan)
    else:
        from . import data
        splits = data.standard_splits(harness.load_dataset(harness.DEFAULT_DATASET), **harness.DEFAULT_SPLITS)
    base = harness.VICTIM_TRAINING if args.split == "victim_train" else harness.SMALL_SPLIT_TRAINING
    changes = {k: v for k, v in (("epochs", args.epochs), ("learning_rate", args.learning_rate),
                                 ("seed", args.seed)) if v is not None}
    config = models.TrainConfig(**{**base.__dict__, **changes})
    manifest = harness.train_and_save(args.arch, splits[args.split], splits["attack_eval"], args.out, config)
    print(f"{args.arch} on {args.split}: test accuracy {manifest.test_accuracy:.4f} -> {args.out}")


def cmd_attack(args):
    plan, out_dir = _load(args)
    result = harness.run_batch(plan, out_dir, workers=args.workers)
    for name, m in result.metrics.items():
        print(name, json.dumps(m.to_dict()))
    print(f"wrote {result.records_path} and {result.metrics_path}")


def cmd_sweep_dim(args):
    plan, out_dir = _load(args)
    lab = harness.load_lab(plan)
    grid = [m if m == "n" else int(m) for m in args.m.split(",") if m]
    rows = harness.dimension_sweep(lab, grid, _base_attack(plan).config, plan.seed, args.workers)
    _emit(rows, out_dir / "sweep_dim.csv")


def cmd_residual(args):
    plan, out_dir = _load(args)
    lab = harness.load_lab(plan)
    refs = lab.references[args.reference_set or plan.default_reference_set]
    if args.references:
        refs = [refs[int(i)] for i in args.references.split(",")]
    rows = harness.residual_sweep(lab.victim_spec, lab.victim_params, refs, lab.images, lab.labels, args.p,
                                  np.random.default_rng(plan.seed))
    _emit(rows, out_dir / "sweep_residual.csv")


def cmd_ablate_dropout(args):
    plan, out_dir = _load(args)
    lab = harness.load_lab(plan)
    sets = args.sets.split(",") if args.sets else None
    rows = harness.ablation_dropout(lab, _base_attack(plan), _floats(args.p_max), sets, plan.seed, args.workers)
    _emit(rows, out_dir / "sweep_dropout.csv")


def cmd_ablate_refs(args):
    plan, out_dir = _load(args)
    lab = harness.load_lab(plan)
    rows = harness.ablation_references(lab, _base_attack(plan), _subsets(args.subsets), args.reference_set,
                                       plan.seed, args.workers)
    _emit(rows, out_dir / "sweep_refs.csv")


def cmd_grid(args):
    plan, out_dir = _load(args)
    lab = harness.load_lab(plan)
    rows = harness.grid_sweep(lab, _base_attack(plan), _floats(args.delta), _floats(args.tau),
                              _floats(args.eta_g), plan.seed, args.workers)
    _emit(rows, out_dir / "sweep_grid.csv")


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "attack": cmd_attack, "sweep-dim": cmd_sweep_dim,
            "residual": cmd_residual, "ablate-dropout": cmd_ablate_dropout, "ablate-refs": cmd_ablate_refs,
            "grid": cmd_grid}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        COMMANDS[args.command](args)
    except (PlanError, FileNotFoundError, models.ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
