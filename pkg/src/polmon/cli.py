"""Command-line interface.

Verbs mirror the experiment phases:
  gen            generate datasets (demos, successes, labeled failures)
  train-policy   behavior-clone a policy variant on base environments
  train-detector train one detector (probe needs a policy checkpoint)
  eval           score policy rollouts in novel environments, write metrics
  timing         detection-delay analysis on intervention rollouts
  ablate         augmentation x component ablation grid
  correct        error-correction pilot (oracle arm or a trained detector)
  report         collate metric CSVs into a ranked summary
  plot           re-emit SVG plots from stored metric curves
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ExperimentConfig
from .pipeline import (PhaseOrderError, Workspace, ablate_phase, correction_phase,
                       evaluate_phase, generate_datasets, read_metric_rows,
                       report_phase, timing_phase, train_detector_phase,
                       train_policy_phase)


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    if getattr(args, "task", None):
        cfg.task = args.task
    if getattr(args, "augment", None):
        cfg.augment = args.augment == "on"
    if getattr(args, "demo_quality", None):
        cfg.demo_quality = args.demo_quality
    if getattr(args, "perturb", None) is not None:
        cfg.perturb_scale = args.perturb
    return cfg


def _common(p, out_required=True):
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polmon", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="generate datasets")
    _common(p)
    p.add_argument("--task", choices=("press", "pick_place", "organize"))
    p.add_argument("--demo-quality", choices=("optimal", "mixed", "suboptimal"))
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("train-policy", help="behavior-clone a policy")
    _common(p)
    p.add_argument("--variant", choices=("naivedc", "dct", "scan"), default="scan")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("train-detector", help="train an error detector")
    _common(p)
    p.add_argument("--detector", choices=("probe", "svdded", "taskembed", "lstmed", "dcted"),
                   required=True)
    p.add_argument("--policy-variant", choices=("naivedc", "dct", "scan"), default="scan")
    p.add_argument("--epochs", type=int)
    p.add_argument("--augment", choices=("on", "off"))

    p = sub.add_parser("eval", help="evaluate detectors on novel environments")
    _common(p)
    p.add_argument("--policy-variant", choices=("naivedc", "dct", "scan"), default="scan")
    p.add_argument("--detector", action="append",
                   help="restrict to given detectors (repeatable)")
    p.add_argument("--perturb", type=float, help="observation-projection perturbation")
    p.add_argument("--export-embeddings", type=Path)

    p = sub.add_parser("timing", help="detection-delay analysis")
    _common(p)
    p.add_argument("--policy-variant", choices=("naivedc", "dct", "scan"), default="scan")
    p.add_argument("--per-env", type=int, default=10)

    p = sub.add_parser("ablate", help="augmentation x component grid")
    _common(p)
    p.add_argument("--policy-variant", choices=("naivedc", "dct", "scan"), default="scan")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("correct", help="error-correction pilot")
    _common(p)
    p.add_argument("--detector", help="trained detector tag; omit for the oracle arm")
    p.add_argument("--policy-variant", choices=("naivedc", "dct", "scan"))
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--pairs", type=int)

    p = sub.add_parser("report", help="collate metrics into a ranked summary")
    _common(p)

    p = sub.add_parser("plot", help="re-emit SVG plots from metric CSVs")
    _common(p)
    return ap


_VARIANT = {"naivedc": "naive_dc", "dct": "dct", "scan": "scan"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.cmd == "gen":
            cfg = _load_config(args)
            generate_datasets(cfg, args.seed, out, force=args.force)
            print(f"datasets written to {out}")
            return 0
        ws = Workspace(out)
        if args.cmd == "train-policy":
            train_policy_phase(ws, _VARIANT[args.variant], args.seed, epochs=args.epochs)
            print(f"policy checkpoint: {ws.policy_path(_VARIANT[args.variant], args.seed)}")
        elif args.cmd == "train-detector":
            augment = None if args.augment is None else args.augment == "on"
            train_detector_phase(ws, args.detector, args.seed, _VARIANT[args.policy_variant],
                                 epochs=args.epochs, augment=augment)
            print(f"detector checkpoint: "
                  f"{ws.detector_path(args.detector, _VARIANT[args.policy_variant], args.seed)}")
        elif args.cmd == "eval":
            rows = evaluate_phase(ws, _VARIANT[args.policy_variant], args.seed,
                                  detectors=tuple(args.detector) if args.detector else None,
                                  perturb=args.perturb,
                                  export_embeddings=args.export_embeddings)
            for r in rows:
                print(f"{r['detector']:>10s}  auroc={r['auroc']:.4f}  auprc={r['auprc']:.4f}")
        elif args.cmd == "timing":
            for r in timing_phase(ws, _VARIANT[args.policy_variant], args.seed,
                                  per_env=args.per_env):
                print(f"{r['detector']:>10s}  median_delay={r['median_delay']}")
        elif args.cmd == "ablate":
            ablate_phase(ws, _VARIANT[args.policy_variant], tuple(args.seeds),
                         epochs=args.epochs)
            print(f"ablation grid written to {ws.out}")
        elif args.cmd == "correct":
            rep = correction_phase(ws, args.seed, detector_tag=args.detector,
                                   policy_variant=_VARIANT.get(args.policy_variant or ""),
                                   pairs=args.pairs, threshold=args.threshold)
            print(f"SR {rep['sr_without']:.3f} -> {rep['sr_with']:.3f} (delta {rep['delta']:+.3f})")
        elif args.cmd == "report":
            summary = report_phase(ws, read_metric_rows(ws))
            for d, n in sorted(summary["auprc"]["top1"].items()):
                print(f"{d:>10s}  top1={n}  avg_rank={summary['auprc']['avg_rank'].get(d):.2f}")
        elif args.cmd == "plot":
            rows = read_metric_rows(ws)
            report_phase(ws, rows)
            print(f"plots and summary refreshed in {ws.out}")
    except (FileExistsError, FileNotFoundError, PhaseOrderError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
