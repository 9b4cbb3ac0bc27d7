"""Summary tables built from the ``result.json`` files of finished runs."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import AdvAugError


class ReportError(AdvAugError):
    pass


def collect(results_dir) -> list[dict]:
    root = Path(results_dir)
    if not root.is_dir():
        raise ReportError(f"no runs: {root} is not a directory")
    runs = [json.loads(p.read_text()) for p in sorted(root.rglob("result.json"))]
    if not runs:
        raise ReportError(f"no runs found under {root}")
    return runs


def aggregate(runs: list[dict]) -> list[dict]:
    """Mean/std of test accuracy per (dataset, subset, policy) over seeds.

    Runs that would be merged must share both config and code hash.
    """
    groups = {}
    for r in runs:
        groups.setdefault((r["dataset"], str(r["subset_size"]), r["policy"]), []).append(r)
    rows = []
    for (dataset, subset, policy), members in sorted(groups.items()):
        hashes = {(m["config_hash"], m["code_hash"]) for m in members}
        if len(hashes) > 1:
            raise ReportError(f"refusing to merge {dataset}/{subset}/{policy}: "
                              f"mismatched config/code hashes {sorted(hashes)}")
        accs = np.array([m["test_acc"] for m in members], dtype=float)
        rows.append({"dataset": dataset, "subset_size": subset, "policy": policy,
                     "ablation": members[0]["ablation"], "mean": float(accs.mean()),
                     "std": float(accs.std()), "n": len(accs),
                     "seeds": sorted(m["seed"] for m in members)})
    return rows


def render_comparison(rows: list[dict]) -> str:
    """Rows = method, columns = dataset/subset (accuracy mean ± std)."""
    cols = sorted({(r["dataset"], r["subset_size"]) for r in rows})
    methods = sorted({r["policy"] for r in rows})
    cell = {(r["policy"], r["dataset"], r["subset_size"]): r for r in rows}
    header = f"{'method':<22}" + "".join(f"{d + ' ' + s:>22}" for d, s in cols)
    lines = [header, "-" * len(header)]
    for m in methods:
        line = f"{m:<22}"
        for d, s in cols:
            r = cell.get((m, d, s))
            line += f"{'-':>22}" if r is None else f"{r['mean']:>12.2f} ± {r['std']:<5.2f}(n={r['n']})"
        lines.append(line)
    return "\n".join(lines)


def render_ablation(rows: list[dict]) -> str:
    from .runner import ablation_components

    lines = [f"{'conf':<6}{'components':<44}{'acc':>10}{'std':>8}{'n':>4}"]
    for r in sorted((r for r in rows if r["policy"].startswith("model-") or r["policy"] == "baseline-none"),
                    key=lambda r: r["ablation"]):
        comps = " + ".join(sorted(ablation_components(r["ablation"])))
        lines.append(f"({r['ablation']}){'':<3}{comps:<44}{r['mean']:>10.2f}{r['std']:>8.2f}{r['n']:>4}")
    return "\n".join(lines)


def report(results_dir) -> dict:
    rows = aggregate(collect(results_dir))
    return {"rows": rows, "comparison": render_comparison(rows), "ablation": render_ablation(rows)}
