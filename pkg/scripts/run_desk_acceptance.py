"""Run the desk-scale MNIST-550 experiments behind the long acceptance checks.

For every seed this trains: the no-DA baseline (a), the light-DA baseline,
the full model (l), the model without the classifier-adversarial term (g),
and a fresh classifier against the frozen late-epoch generator of (l).
Each run writes ``result.json`` into its own directory; finished runs are
skipped and interrupted ones resume from ``last.ckpt``.

    python scripts/run_desk_acceptance.py --data-root data/mnist5k --out runs/desk
"""

import argparse
import dataclasses
import json
import logging
import time
from pathlib import Path

from advaug.datasets import prepare
from advaug.harness.config import parse_config
from advaug.harness.runner import run, spec_from_config

ROOT = Path(__file__).resolve().parents[1]
SNAPSHOT_EPOCH = 200


def plan(seed):
    return [
        ("none", {"mode": "baseline", "da": "none"}),
        ("light", {"mode": "baseline", "da": "light"}),
        ("l", {"ablation": "l", "snapshot_epochs": str(SNAPSHOT_EPOCH)}),
        ("separate", {"ablation": "l"}),
        ("g", {"ablation": "g"}),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(ROOT / "configs" / "mnist550_desk.cfg"))
    ap.add_argument("--data-root", default=str(ROOT / "data" / "mnist5k"))
    ap.add_argument("--out", default=str(ROOT / "runs" / "desk"))
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--only", default="", help="comma-separated subset of run names")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    base = parse_config(args.config)
    base["data_root"] = args.data_root
    only = set(filter(None, args.only.split(",")))
    out = Path(args.out)
    for seed in (int(s) for s in args.seeds.split(",")):
        for name, overrides in plan(seed):
            if only and name not in only:
                continue
            run_dir = out / f"{name}-s{seed}"
            if (run_dir / "result.json").exists():
                continue
            cfg = {**base, **overrides, "seed": str(seed), "out": str(run_dir)}
            spec = spec_from_config(cfg)
            snapshot = None
            if name == "separate":
                snapshot = out / f"l-s{seed}" / f"gen_epoch{SNAPSHOT_EPOCH}.ckpt"
                if not snapshot.exists():
                    logging.warning("skipping %s: snapshot %s missing", run_dir, snapshot)
                    continue
            t0 = time.time()
            summary = run(spec, prepare(spec.dataset), resume=True, generator_snapshot=snapshot)
            logging.info("%s done in %.0fs: test %.2f", run_dir.name, time.time() - t0, summary["test_acc"])
    rows = [json.loads(p.read_text()) for p in sorted(out.glob("*/result.json"))]
    for r in rows:
        print(f"{r['policy']:<16} seed {r['seed']}  test {r['test_acc']:.2f}")


if __name__ == "__main__":
    main()
