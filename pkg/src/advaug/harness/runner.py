"""Experiment specs, ablation masks, single runs and size sweeps."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datasets import DatasetSpec, default_paths, prepare
from ..errors import ConfigError
from ..losses import LossWeights, weights_for
from ..training import Components, Seeds, Trainer, TrainConfig, load_generator
from .config import as_bool, as_int_list

log = logging.getLogger(__name__)

DATA_ROOT_ENV = "ADVAUG_DATA_ROOT"

# Ablation rows: component mask, plus whether the classifier-adversarial term is kept.
ABLATIONS = {
    "a": None,
    "b": (Components(stn=True, encoder=False, decoder=False, dc=False, dd=False, invariance=True), False),
    "c": (Components(stn=True, encoder=False, decoder=False, dc=True, dd=True), False),
    "d": (Components(stn=False, encoder=False, decoder=True, dc=True, dd=False), False),
    "e": (Components(stn=False, encoder=True, decoder=True, dc=True, dd=False), False),
    "f": (Components(stn=False, encoder=True, decoder=True, dc=False, dd=True), False),
    "g": (Components(stn=False, encoder=True, decoder=True, dc=True, dd=True), False),
    "h": (Components(), False),
    "l": (Components(), True),
}


def ablation_components(ablation: str) -> frozenset:
    """The component set of an ablation row, e.g. {'C', 'T', 'D^C', 'D^D'} for (c)."""
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation id {ablation!r}; choose from {sorted(ABLATIONS)}")
    row = ABLATIONS[ablation]
    if row is None:
        return frozenset({"C"})
    comp, adversarial = row
    return comp.names(gamma=1.0 if adversarial else 0.0)


@dataclass
class ExperimentSpec:
    dataset: DatasetSpec
    train: TrainConfig
    ablation: str = "l"
    out_dir: Path = Path("runs/default")
    export_samples: bool = False
    label: str = ""

    def __post_init__(self):
        ablation_components(self.ablation)
        self.out_dir = Path(self.out_dir)

    @property
    def policy_label(self) -> str:
        if self.train.mode == "baseline":
            return f"baseline-{self.train.da_policy}"
        return f"model-{self.ablation}"


def resolve_train_config(base: TrainConfig, ablation: str) -> TrainConfig:
    """Apply an ablation row to a training config."""
    ablation_components(ablation)
    row = ABLATIONS[ablation]
    if row is None:
        return dataclasses.replace(base, mode="baseline", snapshot_epochs=())
    comp, adversarial = row
    weights = base.weights if adversarial else dataclasses.replace(base.weights, gamma=0.0)
    if base.mode == "baseline":
        base = dataclasses.replace(base, mode="joint")
    return dataclasses.replace(base, components=comp, weights=weights)


def seeds_from(seed: int) -> Seeds:
    return Seeds(init=1000 * seed, data=1000 * seed + 1, noise=1000 * seed + 2, dropout=1000 * seed + 3)


def spec_from_config(cfg: dict) -> ExperimentSpec:
    """Build an :class:`ExperimentSpec` from flat string key/values."""
    cfg = dict(cfg)
    name = cfg.get("dataset", "mnist")
    root = cfg.get("data_root") or os.environ.get(DATA_ROOT_ENV) or "data"
    train_paths, test_paths = default_paths(name, root)
    if cfg.get("train_path"):
        train_paths = tuple(cfg["train_path"].replace(",", " ").split())
    if cfg.get("test_path"):
        test_paths = tuple(cfg["test_path"].replace(",", " ").split())
    seed = int(cfg.get("seed", 0))
    subset = cfg.get("subset_size", "full")
    dataset = DatasetSpec(name=name, train_path=tuple(train_paths), test_path=tuple(test_paths),
                          subset_size=subset if subset == "full" else int(subset),
                          val_fraction=float(cfg.get("val_fraction", 0.0)),
                          seed=int(cfg.get("subset_seed", seed)),
                          per_channel=as_bool(cfg.get("per_channel", False)))
    seeds = seeds_from(seed)
    seeds = Seeds(**{k: int(cfg.get(f"seed_{k}", getattr(seeds, k))) for k in ("init", "data", "noise", "dropout")})
    defaults = weights_for(name)
    weights = LossWeights(alpha=float(cfg.get("alpha", defaults.alpha)),
                          beta=float(cfg.get("beta", defaults.beta)),
                          gamma=float(cfg.get("gamma", defaults.gamma)))
    base = TrainConfig(
        dataset=name,
        channels=dataset.channels,
        m=int(cfg.get("m", 64)),
        n_iter=int(cfg.get("n_iter", 1000)),
        lr_common=float(cfg.get("lr_common", 0.0005)),
        lr_classifier=float(cfg["lr_classifier"]) if cfg.get("lr_classifier") else None,
        weights=weights,
        width=float(cfg.get("width", 1.0)),
        seeds=seeds,
        mode=cfg.get("mode", "joint"),
        da_policy=cfg.get("da", "none"),
        snapshot_epochs=as_int_list(cfg.get("snapshot_epochs")),
        share_encoder=as_bool(cfg.get("share_encoder", True)),
        eval_every=int(cfg.get("eval_every", 1)),
        checkpoint_every=int(cfg.get("checkpoint_every", 1)),
    )
    ablation = cfg.get("ablation", "l")
    if base.mode == "baseline":
        ablation = "a"
    train = resolve_train_config(base, ablation)
    if ablation == "a":
        train = dataclasses.replace(train, da_policy=cfg.get("da", "none"))
    out = Path(cfg.get("out", f"runs/{name}-{subset}-{ablation}-s{seed}"))
    return ExperimentSpec(dataset, train, ablation, out, as_bool(cfg.get("export_samples", False)),
                          cfg.get("label", ""))


# ---------------------------------------------------------------------------
# Hashes
# ---------------------------------------------------------------------------


def code_hash() -> str:
    """Digest of the package sources as they were when this process imported it."""
    return _CODE_HASH


def _hash_sources() -> str:
    root = Path(__file__).resolve().parents[1]
    h = hashlib.sha256()
    for path in sorted(root.rglob("*.py")):
        h.update(str(path.relative_to(root)).encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


_CODE_HASH = _hash_sources()


def config_hash(spec: ExperimentSpec, mode: str | None = None) -> str:
    """Digest of everything that should agree between seeds of one experiment."""
    train = spec.train.to_dict()
    if mode:
        train["mode"] = mode
    for k in ("seeds", "eval_every", "checkpoint_every", "snapshot_epochs"):
        train.pop(k)
    ds = dataclasses.asdict(spec.dataset)
    ds.pop("seed")
    ds["train_path"] = [Path(p).name for p in ds["train_path"]]
    ds["test_path"] = [Path(p).name for p in ds["test_path"]]
    blob = json.dumps({"train": train, "dataset": ds, "ablation": spec.ablation}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


def run(spec: ExperimentSpec, data=None, resume: bool = False, generator_snapshot=None) -> dict:
    """Train the components selected by ``spec.ablation`` and write ``result.json``.

    With ``generator_snapshot`` a fresh classifier is trained against that frozen
    generator instead. ``resume`` continues from ``last.ckpt`` when one exists.
    """
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    data = data if data is not None else prepare(spec.dataset)
    mode = "separate" if generator_snapshot is not None else spec.train.mode
    cfg = dataclasses.replace(spec.train, mode=mode)
    if mode != "joint":
        cfg = dataclasses.replace(cfg, snapshot_epochs=())
    trainer = Trainer(cfg, data, spec.out_dir,
                      frozen_generator=load_generator(generator_snapshot)[0] if generator_snapshot else None)
    last = spec.out_dir / "last.ckpt"
    if resume and last.exists():
        trainer.load(last)
        log.info("resuming %s at epoch %d", spec.out_dir, trainer.epoch)
    result = trainer.run()
    policy = f"separate-{spec.ablation}" if generator_snapshot else spec.policy_label
    summary = {
        "dataset": spec.dataset.name,
        "subset_size": spec.dataset.subset_size,
        "ablation": spec.ablation,
        "policy": policy,
        "label": spec.label,
        "seed": spec.dataset.seed,
        "seeds": dataclasses.asdict(spec.train.seeds),
        "epochs": result.epochs_run,
        "test_acc": result.test_acc,
        "val_acc": result.val_acc,
        "best_val_acc": result.best_val_acc if np.isfinite(result.best_val_acc) else None,
        "config_hash": config_hash(spec, mode),
        "code_hash": code_hash(),
        "config": spec.train.to_dict(),
        "norm_stats": data.stats.as_dict(),
    }
    (spec.out_dir / "result.json").write_text(json.dumps(summary, indent=2, default=str))
    if spec.export_samples and result.bundle.generator is not None:
        from .export import export_samples_from_generator
        first = data.test.images[:64] if len(data.test) else data.train.images[:64]
        export_samples_from_generator(result.bundle.generator, first, data.stats,
                                      spec.out_dir / "samples.png", seed=spec.train.seeds.noise)
    return summary


SWEEP_POLICIES = ("none", "light", "strong", "model")


def sweep_sizes(base: ExperimentSpec, sizes, policies=SWEEP_POLICIES, seeds=(0,), out_csv=None) -> list[dict]:
    """One run per (size, policy, seed); rows are (size, policy, accuracy, seed)."""
    rows = []
    for size in sizes:
        for policy in policies:
            for seed in seeds:
                ds = dataclasses.replace(base.dataset, subset_size=int(size), seed=seed)
                if policy == "model":
                    ablation, train = base.ablation if base.ablation != "a" else "l", base.train
                    train = resolve_train_config(dataclasses.replace(train, mode="joint"), ablation)
                else:
                    ablation = "a"
                    train = dataclasses.replace(resolve_train_config(base.train, "a"), da_policy=policy)
                train = dataclasses.replace(train, seeds=seeds_from(seed))
                out = base.out_dir / f"size{size}-{policy}-s{seed}"
                summary = run(ExperimentSpec(ds, train, ablation, out))
                row = {"size": int(size), "policy": policy, "accuracy": summary["test_acc"], "seed": seed}
                rows.append(row)
                log.info("sweep %s", row)
    if out_csv:
        write_csv(out_csv, rows, ["size", "policy", "accuracy", "seed"])
    return rows


def summarize_sweep(rows) -> list[dict]:
    groups = {}
    for r in rows:
        groups.setdefault((r["size"], r["policy"]), []).append(float(r["accuracy"]))
    return [{"size": s, "policy": p, "mean": float(np.mean(v)), "std": float(np.std(v)), "n": len(v)}
            for (s, p), v in sorted(groups.items())]


def write_csv(path, rows, fields):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in fields})
