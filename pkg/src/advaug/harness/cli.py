"""``advaug`` command line: train, ablate, sweep, export-samples, report, describe, grad-check."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import AdvAugError
from .config import as_int_list, as_str_list, merge, parse_config
from .runner import ABLATIONS, DATA_ROOT_ENV, SWEEP_POLICIES, run, spec_from_config, summarize_sweep, sweep_sizes

log = logging.getLogger("advaug")

# CLI flag -> config key. Every flag overrides the key of the same name.
TRAIN_FLAGS = {
    "--dataset": dict(help="mnist | fmnist | svhn-converted | cifar10"),
    "--data-root": dict(help=f"directory with the dataset files (default: ${DATA_ROOT_ENV} or ./data)"),
    "--train-path": dict(help="explicit training files, comma-separated"),
    "--test-path": dict(help="explicit test files, comma-separated"),
    "--subset-size": dict(help="number of training samples or 'full'"),
    "--val-fraction": dict(),
    "--seed": dict(help="run seed; network, data, noise and dropout seeds derive from it"),
    "--width": dict(help="channel width multiplier"),
    "--m": dict(help="batch size"),
    "--n-iter": dict(help="number of epochs"),
    "--lr-common": dict(),
    "--lr-classifier": dict(),
    "--alpha": dict(),
    "--beta": dict(),
    "--gamma": dict(),
    "--mode": dict(help="joint | baseline"),
    "--da": dict(help="none | light | strong (baseline mode)"),
    "--ablation": dict(help=f"one of {','.join(ABLATIONS)}"),
    "--snapshot-epochs": dict(help="comma-separated epochs at which the generator is saved"),
    "--eval-every": dict(),
    "--checkpoint-every": dict(),
    "--out": dict(help="output directory"),
}


def _add_train_flags(p):
    p.add_argument("--config", help="key = value experiment file")
    for flag, kw in TRAIN_FLAGS.items():
        p.add_argument(flag, dest=flag[2:].replace("-", "_"), default=None, **kw)
    p.add_argument("--export-samples", action="store_true", default=None,
                   help="write samples.png from the final generator")


def _load_config(args) -> dict:
    base = parse_config(args.config) if getattr(args, "config", None) else {}
    overrides = {k[2:].replace("-", "_"): getattr(args, k[2:].replace("-", "_")) for k in TRAIN_FLAGS}
    if getattr(args, "export_samples", None):
        overrides["export_samples"] = "true"
    return merge(base, overrides)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    spec = spec_from_config(cfg)
    summary = run(spec, resume=args.resume, generator_snapshot=args.generator)
    print(json.dumps({k: summary[k] for k in ("policy", "seed", "epochs", "test_acc", "config_hash")}))
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    ids = as_str_list(args.ids) or tuple(ABLATIONS)
    out = Path(cfg.get("out") or "runs/ablation")
    seeds = as_int_list(args.seeds) or (int(cfg.get("seed", 0)),)
    for ablation in ids:
        for seed in seeds:
            run_cfg = {**cfg, "ablation": ablation, "seed": str(seed), "out": str(out / f"{ablation}-s{seed}")}
            run_cfg["mode"] = "baseline" if ablation == "a" else "joint"
            summary = run(spec_from_config(run_cfg), resume=args.resume)
            print(f"({ablation}) seed {seed}: test accuracy {summary['test_acc']:.2f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    spec = spec_from_config({**cfg, "out": cfg.get("out") or "runs/sweep"})
    sizes = as_int_list(args.sizes)
    if not sizes:
        raise SystemExit("sweep needs --sizes")
    rows = sweep_sizes(spec, sizes, as_str_list(args.policies) or SWEEP_POLICIES,
                       as_int_list(args.seeds) or (0,), out_csv=args.csv or spec.out_dir / "sweep.csv")
    for r in summarize_sweep(rows):
        print(f"{r['size']:>6} {r['policy']:<8} {r['mean']:6.2f} ± {r['std']:.2f} (n={r['n']})")
    return 0


def cmd_export(args) -> int:
    from ..datasets import prepare
    from .export import export_samples

    cfg = _load_config(args)
    spec = spec_from_config(cfg)
    data = prepare(spec.dataset)
    source = data.test if len(data.test) else data.train
    export_samples(args.checkpoint, source.images[:64], args.output, labels=source.labels[:64], seed=args.noise_seed)
    print(args.output)
    return 0


def cmd_report(args) -> int:
    from .report import report

    out = report(args.results_dir)
    print(out["comparison"])
    print()
    print(out["ablation"])
    return 0


def cmd_describe(args) -> int:
    import torch

    from ..models import Classifier, ClassDiscriminator, DissimilarityDiscriminator, Generator, GeneratorConfig, describe

    gen = torch.Generator().manual_seed(0)
    nets = {"generator": Generator(GeneratorConfig(args.channels, args.width), gen),
            "class discriminator": ClassDiscriminator(args.channels, args.width, gen),
            "dissimilarity discriminator": DissimilarityDiscriminator(args.channels, args.width, gen),
            "classifier": Classifier(args.channels, args.width, gen)}
    print(describe(nets))
    return 0


def cmd_grad_check(args) -> int:
    from .gradsuite import run_suite

    result = run_suite(instances=args.instances, seed=args.seed, include_generator=not args.skip_generator)
    print(result)
    return 0 if result.passed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="advaug", description="Learned adversarial data augmentation")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    _add_train_flags(p)
    p.add_argument("--resume", action="store_true", help="continue from <out>/last.ckpt if present")
    p.add_argument("--generator", help="frozen generator snapshot: train a fresh classifier against it")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("ablate", help="run ablation rows")
    _add_train_flags(p)
    p.add_argument("--ids", help="comma-separated ablation ids (default: all)")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep", help="accuracy versus training-set size")
    _add_train_flags(p)
    p.add_argument("--sizes", help="comma-separated subset sizes")
    p.add_argument("--policies", help=f"comma-separated, from {','.join(SWEEP_POLICIES)}")
    p.add_argument("--seeds")
    p.add_argument("--csv", help="output CSV (default: <out>/sweep.csv)")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("export-samples", help="real vs transformed image grid from a generator snapshot")
    _add_train_flags(p)
    p.add_argument("checkpoint")
    p.add_argument("output")
    p.add_argument("--noise-seed", type=int, default=0)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("report", help="summary tables from finished runs")
    p.add_argument("results_dir")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("describe", help="print layer shapes and parameter counts")
    p.add_argument("--width", type=float, default=1.0)
    p.add_argument("--channels", type=int, default=1)
    p.set_defaults(fn=cmd_describe)

    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-generator", action="store_true")
    p.set_defaults(fn=cmd_grad_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except (AdvAugError, FileNotFoundError, ValueError) as exc:
        print(f"advaug {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
