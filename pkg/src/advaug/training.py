"""Joint adversarial training, separate (frozen-generator) training and classifier baselines.

One joint iteration performs four sequential updates, each from a fresh
forward pass: the class discriminator, the dissimilarity discriminator, the
generator, and the classifier. Every update computes gradients for its own
network only, so the parameter write sets of the four updates are disjoint.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import augment, stn
from .datasets import PreparedData, TripleSampler, iterate_batches, to_batch
from .errors import ConfigError, DivergenceError
from .losses import (
    CLASSIFIER_LR,
    LR_COMMON,
    LossReport,
    LossWeights,
    class_prob,
    loss_c,
    loss_dc,
    loss_dd,
    loss_g_terms,
    loss_total,
    weights_for,
)
from .models import (
    Classifier,
    ClassDiscriminator,
    DissimilarityDiscriminator,
    Generator,
    GeneratorConfig,
    NOISE_DIM,
)
from .nn.checkpoint import load_checkpoint, load_module_arrays, module_arrays, save_checkpoint
from .nn.optim import Adam

log = logging.getLogger(__name__)

MODES = ("joint", "separate", "baseline")
NETWORKS = ("dc", "dd", "generator", "classifier")


@dataclass(frozen=True)
class Components:
    """Which parts of the full model take part in training."""

    stn: bool = True
    encoder: bool = True
    decoder: bool = True
    dc: bool = True
    dd: bool = True
    invariance: bool = False  # stn trained through the classifier loss, not adversarially

    @property
    def has_generator(self) -> bool:
        return self.stn or self.decoder

    def names(self, gamma: float = 0.0) -> frozenset:
        """Component labels; the adversarial classifier term counts as present when gamma > 0."""
        labels = {"stn": "T", "encoder": "E_NC", "decoder": "D_EC", "dc": "D^C", "dd": "D^D"}
        out = {"C"} | {v for k, v in labels.items() if getattr(self, k)}
        if gamma > 0 and self.has_generator and not self.invariance:
            out.add("G_ADV")
        return frozenset(out)

    def generator_config(self, channels: int, width: float, share_encoder: bool = True) -> GeneratorConfig:
        return GeneratorConfig(channels=channels, width=width, use_stn=self.stn,
                               use_unet=self.encoder and self.decoder,
                               noise_only=self.decoder and not self.encoder,
                               share_encoder=share_encoder)


FULL = Components()


@dataclass
class Seeds:
    init: int = 0
    data: int = 1
    noise: int = 2
    dropout: int = 3


@dataclass
class TrainConfig:
    dataset: str = "mnist"
    channels: int = 1
    m: int = 64
    n_iter: int = 1000
    lr_common: float = LR_COMMON
    lr_classifier: float | None = None
    weights: LossWeights | None = None
    width: float = 1.0
    seeds: Seeds = field(default_factory=Seeds)
    mode: str = "joint"
    da_policy: str = "none"
    snapshot_epochs: tuple = ()
    components: Components = FULL
    share_encoder: bool = True
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    eval_every: int = 1
    checkpoint_every: int = 1

    def __post_init__(self):
        if self.lr_classifier is None:
            self.lr_classifier = CLASSIFIER_LR.get(self.dataset, LR_COMMON)
        if self.weights is None:
            self.weights = weights_for(self.dataset)
        self.snapshot_epochs = tuple(sorted(int(e) for e in self.snapshot_epochs))
        self.validate()

    def validate(self):
        if self.m < 2:
            raise ConfigError("batch size m must be at least 2")
        if self.n_iter < 1:
            raise ConfigError("n_iter must be at least 1")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.da_policy not in augment.POLICIES:
            raise ConfigError(f"unknown DA policy {self.da_policy!r}")
        if not (self.lr_common >= 0 and self.lr_classifier >= 0):
            raise ConfigError("learning rates must be nonnegative")
        if any(e < 1 or e > self.n_iter for e in self.snapshot_epochs):
            raise ConfigError(f"snapshot epochs {self.snapshot_epochs} fall outside [1, {self.n_iter}]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["seeds"] = Seeds(**d.get("seeds", {}))
        d["components"] = Components(**d.get("components", {}))
        if d.get("weights") is not None:
            d["weights"] = LossWeights(**d["weights"])
        d["snapshot_epochs"] = tuple(d.get("snapshot_epochs", ()))
        d["betas"] = tuple(d.get("betas", (0.9, 0.999)))
        return cls(**d)


# ---------------------------------------------------------------------------
# Model bundle and RNG streams
# ---------------------------------------------------------------------------


class ModelBundle:
    """The networks taking part in a run, their optimizers, and the shared RNG streams."""

    def __init__(self, cfg: TrainConfig, with_adversaries: bool | None = None):
        comp = cfg.components
        self.cfg = cfg
        init = torch.Generator().manual_seed(cfg.seeds.init)
        self.noise_gen = torch.Generator().manual_seed(cfg.seeds.noise)
        self.dropout_gen = torch.Generator().manual_seed(cfg.seeds.dropout)
        self.data_rng = np.random.default_rng(cfg.seeds.data)
        self.da_rng = np.random.default_rng([cfg.seeds.data, 1])

        joint = cfg.mode == "joint" if with_adversaries is None else with_adversaries
        self.generator = (Generator(comp.generator_config(cfg.channels, cfg.width, cfg.share_encoder), init)
                          if joint and comp.has_generator else None)
        adversarial = joint and not comp.invariance
        self.dc = (ClassDiscriminator(cfg.channels, cfg.width, init, self.dropout_gen)
                   if adversarial and comp.dc else None)
        self.dd = (DissimilarityDiscriminator(cfg.channels, cfg.width, init, self.dropout_gen)
                   if adversarial and comp.dd else None)
        self.classifier = Classifier(cfg.channels, cfg.width, init, self.dropout_gen)

        self.optimizers = {}
        for name, net in self.networks().items():
            lr = cfg.lr_classifier if name == "classifier" else cfg.lr_common
            self.optimizers[name] = Adam(((f"{name}.{k}", p) for k, p in net.named_parameters()),
                                         lr=lr, betas=cfg.betas, eps=cfg.adam_eps)

    def networks(self) -> dict:
        nets = {"dc": self.dc, "dd": self.dd, "generator": self.generator, "classifier": self.classifier}
        return {k: v for k, v in nets.items() if v is not None}

    def train(self):
        for net in self.networks().values():
            net.train()

    def eval(self):
        for net in self.networks().values():
            net.eval()

    def parameter_snapshot(self) -> dict:
        return {f"{n}.{k}": p.detach().clone() for n, net in self.networks().items()
                for k, p in net.named_parameters()}

    def rng_state(self) -> dict:
        return {
            "data": self.data_rng.bit_generator.state,
            "da": self.da_rng.bit_generator.state,
        }

    def arrays(self) -> dict:
        out = {"rng/noise": self.noise_gen.get_state(), "rng/dropout": self.dropout_gen.get_state()}
        for name, net in self.networks().items():
            out.update(module_arrays(net, f"params/{name}"))
            state = self.optimizers[name].state_dict()
            out[f"adam/{name}/t"] = np.array(state.pop("t"))
            out[f"adam/{name}/lr"] = np.array(state.pop("lr"))
            out.update({f"adam/{name}/{k}": v for k, v in state.items()})
        return out

    def load_arrays(self, arrays: dict, rng: dict | None = None):
        self.noise_gen.set_state(torch.from_numpy(np.array(arrays["rng/noise"])))
        self.dropout_gen.set_state(torch.from_numpy(np.array(arrays["rng/dropout"])))
        for name, net in self.networks().items():
            load_module_arrays(net, arrays, f"params/{name}")
            prefix = f"adam/{name}/"
            state = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
            self.optimizers[name].load_state_dict(state)
        if rng:
            self.data_rng.bit_generator.state = rng["data"]
            self.da_rng.bit_generator.state = rng["da"]


def sample_noise(bundle: ModelBundle, batch: int) -> torch.Tensor:
    return torch.randn(batch, NOISE_DIM, generator=bundle.noise_gen)


# ---------------------------------------------------------------------------
# One iteration
# ---------------------------------------------------------------------------


def _update(bundle: ModelBundle, name: str, loss: torch.Tensor, step=None):
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite {name} loss", layer=name, step=step)
    opt = bundle.optimizers[name]
    grads = torch.autograd.grad(loss, opt.params, allow_unused=True)
    opt.step(list(grads))


def train_step(bundle: ModelBundle, triple, z: torch.Tensor, cfg: TrainConfig, step=None,
               on_update=None) -> LossReport:
    """One joint iteration: update D^C, then D^D, then G, then C.

    ``on_update(name)`` is called after each sub-update (used by audits).
    """
    comp = cfg.components
    g, dc, dd, c = bundle.generator, bundle.dc, bundle.dd, bundle.classifier
    xi, yi = triple.batch_i.images, triple.batch_i.labels
    xj, yj = triple.batch_j.images, triple.batch_j.labels
    xk = triple.batch_k.images
    bundle.train()
    notify = on_update or (lambda name: None)

    if g is None:
        raise ConfigError("joint training needs a generator; use the baseline mode instead")
    if comp.invariance:
        return _invariance_step(bundle, triple, cfg, step, notify)

    x_aug, _ = g(xi, z, yi)
    fake = x_aug.detach()

    l_dc = l_dd = 0.0
    if dc is not None:
        loss = loss_dc(dc(xj, yj), dc(fake, yi))
        _update(bundle, "dc", loss, step)
        l_dc = loss.item()
        notify("dc")
    if dd is not None:
        loss = loss_dd(dd(xi, xk), dd(xi, fake))
        _update(bundle, "dd", loss, step)
        l_dd = loss.item()
        notify("dd")

    w = cfg.weights
    use_gamma = w.gamma > 0
    terms = loss_g_terms(dc(x_aug, yi) if dc is not None else None,
                         dd(xi, x_aug) if dd is not None else None,
                         class_prob(c(x_aug), yi) if use_gamma else None, w)
    loss = terms["class"] + terms["dissimilarity"] + terms["adversarial"]
    if loss.requires_grad:
        _update(bundle, "generator", loss, step)
    l_g = loss.item()
    notify("generator")

    with torch.no_grad():
        x_aug, _ = g(xi, z, yi)
    loss = loss_c(c(xj), yj, c(x_aug), yi)
    _update(bundle, "classifier", loss, step)
    notify("classifier")
    return loss_total(l_g, l_dc, l_dd, loss.item(), terms)


def _invariance_step(bundle, triple, cfg, step, notify):
    """Standard STN usage: the warp is trained by the classifier loss to remove variation."""
    g, c = bundle.generator, bundle.classifier
    xj, yj = triple.batch_j.images, triple.batch_j.labels
    loss = loss_c(c(invariance_transform(g, xj)), yj)
    if not torch.isfinite(loss):
        raise DivergenceError("non-finite classifier loss", layer="classifier", step=step)
    params = bundle.optimizers["generator"].params + bundle.optimizers["classifier"].params
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    n_g = len(bundle.optimizers["generator"].params)
    bundle.optimizers["generator"].step(list(grads[:n_g]))
    notify("generator")
    bundle.optimizers["classifier"].step(list(grads[n_g:]))
    notify("classifier")
    return loss_total(0.0, 0.0, 0.0, loss.item())


def invariance_transform(g: Generator, x: torch.Tensor) -> torch.Tensor:
    z = torch.zeros(x.shape[0], NOISE_DIM, dtype=x.dtype)
    return stn.warp(x, g.predict_theta(x, z))


# ---------------------------------------------------------------------------
# Evaluation and metrics
# ---------------------------------------------------------------------------


@torch.no_grad()
def accuracy(bundle: ModelBundle, data, batch: int = 500) -> float:
    if data is None or len(data) == 0:
        return float("nan")
    bundle.eval()
    invariance = bundle.cfg.components.invariance and bundle.generator is not None
    correct = 0
    for b in iterate_batches(data, batch):
        x = invariance_transform(bundle.generator, b.images) if invariance else b.images
        correct += int((bundle.classifier.logits(x).argmax(1) == b.labels).sum())
    bundle.train()
    return 100.0 * correct / len(data)


METRIC_FIELDS = ["kind", "epoch", "step", "L_G", "L_DC", "L_DD", "L_C", "L_total",
                 "L_G_class", "L_G_dissimilarity", "L_G_adversarial",
                 "train_acc", "val_acc", "test_acc", "wall_time"]


class MetricsWriter:
    """Appends one row per step and one summary row per epoch to a CSV file."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows = []
        if self.path is not None and not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("w", newline="") as fh:
                csv.DictWriter(fh, METRIC_FIELDS).writeheader()

    def write(self, row: dict):
        row = {k: row.get(k, "") for k in METRIC_FIELDS}
        self.rows.append(row)
        if self.path is not None:
            with self.path.open("a", newline="") as fh:
                csv.DictWriter(fh, METRIC_FIELDS).writerow(row)


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------


class Fingerprint:
    """Running digest of the values drawn from one RNG stream."""

    def __init__(self, hexdigest: str = ""):
        self.value = hexdigest

    def update(self, array):
        h = hashlib.sha256(self.value.encode())
        h.update(np.ascontiguousarray(np.asarray(array)).tobytes())
        self.value = h.hexdigest()


@dataclass
class TrainResult:
    bundle: ModelBundle
    metrics: list
    test_acc: float
    val_acc: float
    best_val_acc: float
    losses: list
    epochs_run: int


class Trainer:
    """Seeded, resumable epoch loop shared by the joint, separate and baseline modes."""

    def __init__(self, cfg: TrainConfig, data: PreparedData, out_dir=None, frozen_generator=None):
        self.cfg = cfg
        self.data = data
        self.out_dir = Path(out_dir) if out_dir else None
        with_adv = cfg.mode == "joint"
        self.bundle = ModelBundle(cfg, with_adversaries=with_adv)
        self.frozen = frozen_generator
        if self.frozen is not None:
            self.frozen.eval()
            for p in self.frozen.parameters():
                p.requires_grad_(False)
        fill = float(np.mean((0.0 - data.stats.mean) / data.stats.std))
        self.policy = augment.AugmentPolicy.for_dataset(cfg.da_policy, cfg.dataset, fill=fill)
        self.sampler = TripleSampler(data.train, cfg.m, self.bundle.data_rng)
        self.epoch = 0
        self.step_in_epoch = 0
        self.global_step = 0
        self.order = None
        self.best_val = -math.inf
        self.losses = []
        self.fingerprints = {"data": Fingerprint(), "noise": Fingerprint()}
        self.metrics = MetricsWriter(self.out_dir / "metrics.csv" if self.out_dir else None)
        self._t0 = time.time()
        self._epoch_losses = []

    # -- state -----------------------------------------------------------------

    def state_meta(self) -> dict:
        return {"config": self.cfg.to_dict(), "epoch": self.epoch, "step_in_epoch": self.step_in_epoch,
                "global_step": self.global_step, "best_val": self.best_val,
                "rng": self.bundle.rng_state(),
                "order": None if self.order is None else self.order.tolist(),
                "fingerprints": {k: f.value for k, f in self.fingerprints.items()},
                "epoch_losses": self._epoch_losses,
                "stats": self.data.stats.as_dict()}

    def save(self, path):
        save_checkpoint(path, self.bundle.arrays(), self.state_meta())

    def load(self, path):
        arrays, meta = load_checkpoint(path)
        self.bundle.load_arrays(arrays, meta["rng"])
        self.epoch, self.step_in_epoch = meta["epoch"], meta["step_in_epoch"]
        self.global_step, self.best_val = meta["global_step"], meta["best_val"]
        self.order = None if meta["order"] is None else np.array(meta["order"], dtype=np.int64)
        self.fingerprints = {k: Fingerprint(v) for k, v in meta["fingerprints"].items()}
        self._epoch_losses = meta["epoch_losses"]

    def save_generator(self, path):
        g = self.bundle.generator
        meta = {"config": self.cfg.to_dict(), "epoch": self.epoch, "stats": self.data.stats.as_dict()}
        save_checkpoint(path, module_arrays(g, "params/generator"), meta)

    # -- loop ------------------------------------------------------------------

    def _step(self, positions) -> LossReport:
        cfg, b = self.cfg, self.bundle
        self.fingerprints["data"].update(positions)
        if cfg.mode == "joint":
            triple = self.sampler.triple(positions)
            self.fingerprints["data"].update(triple.batch_j.indices)
            self.fingerprints["data"].update(triple.batch_k.indices)
            z = sample_noise(b, len(positions))
            self.fingerprints["noise"].update(z.numpy())
            return train_step(b, triple, z, cfg, step=self.global_step)
        if cfg.mode == "separate":
            real = to_batch(self.data.train, b.data_rng.integers(len(self.data.train), size=len(positions)))
            self.fingerprints["data"].update(real.indices)
            batch = to_batch(self.data.train, positions)
            z = sample_noise(b, len(positions))
            self.fingerprints["noise"].update(z.numpy())
            with torch.no_grad():
                x_aug, _ = self.frozen(batch.images, z, batch.labels)
            b.train()
            loss = loss_c(b.classifier(real.images), real.labels, b.classifier(x_aug), batch.labels)
            _update(b, "classifier", loss, self.global_step)
            return loss_total(0.0, 0.0, 0.0, loss.item())
        batch = to_batch(self.data.train, positions)
        x = augment.apply_policy(batch.images, self.policy, b.da_rng)
        b.train()
        loss = loss_c(b.classifier(x), batch.labels)
        _update(b, "classifier", loss, self.global_step)
        return loss_total(0.0, 0.0, 0.0, loss.item())

    def _end_epoch(self):
        cfg = self.cfg
        row = {"kind": "epoch", "epoch": self.epoch, "step": self.global_step,
               "wall_time": round(time.time() - self._t0, 3)}
        if self._epoch_losses:
            for k in ("L_G", "L_DC", "L_DD", "L_C", "L_total"):
                row[k] = float(np.mean([r[k] for r in self._epoch_losses]))
        last = self.epoch == cfg.n_iter
        if last or (cfg.eval_every and self.epoch % cfg.eval_every == 0):
            row["train_acc"] = accuracy(self.bundle, self.data.train)
            row["val_acc"] = accuracy(self.bundle, self.data.val)
            row["test_acc"] = accuracy(self.bundle, self.data.test)
            if self.out_dir and len(self.data.val) and row["val_acc"] > self.best_val:
                self.best_val = row["val_acc"]
                save_checkpoint(self.out_dir / "best_val.ckpt",
                                module_arrays(self.bundle.classifier, "params/classifier"),
                                {"epoch": self.epoch, "val_acc": self.best_val})
            log.info("epoch %d: train %.2f val %.2f test %.2f", self.epoch, row["train_acc"],
                     row["val_acc"], row["test_acc"])
        self.metrics.write(row)
        self._epoch_losses = []
        if self.out_dir:
            if self.epoch in cfg.snapshot_epochs and self.bundle.generator is not None:
                self.save_generator(self.out_dir / f"gen_epoch{self.epoch}.ckpt")
            if cfg.checkpoint_every and (self.epoch % cfg.checkpoint_every == 0 or last):
                self.save(self.out_dir / "last.ckpt")
        return row

    def run(self, max_steps: int | None = None) -> TrainResult:
        """Train until ``n_iter`` epochs are done, or stop after ``max_steps`` more steps."""
        cfg = self.cfg
        taken = 0
        last_row = {}
        while self.epoch < cfg.n_iter:
            if self.order is None:
                self.order = self.bundle.data_rng.permutation(len(self.data.train))
                self.step_in_epoch = 0
            starts = range(self.step_in_epoch * cfg.m, len(self.order), cfg.m)
            for start in starts:
                if max_steps is not None and taken >= max_steps:
                    return self._result(last_row)
                report = self._step(self.order[start:start + cfg.m])
                self.losses.append(report)
                row = report.row()
                self._epoch_losses.append(row)
                self.metrics.write({"kind": "step", "epoch": self.epoch + 1, "step": self.global_step,
                                    **row, "wall_time": round(time.time() - self._t0, 3)})
                self.global_step += 1
                self.step_in_epoch += 1
                taken += 1
            self.epoch += 1
            self.order = None
            last_row = self._end_epoch()
        return self._result(last_row)

    def _result(self, row) -> TrainResult:
        return TrainResult(self.bundle, self.metrics.rows, row.get("test_acc", float("nan")),
                           row.get("val_acc", float("nan")), self.best_val, self.losses, self.epoch)


def train_joint(cfg: TrainConfig, data: PreparedData, out_dir=None, resume=None) -> TrainResult:
    if cfg.mode != "joint":
        cfg = dataclasses.replace(cfg, mode="joint")
    trainer = Trainer(cfg, data, out_dir)
    if resume:
        trainer.load(resume)
    return trainer.run()


def load_generator(path) -> tuple[Generator, dict]:
    """Rebuild a generator from a ``gen_epoch{E}.ckpt`` snapshot."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"generator snapshot {path} does not exist")
    arrays, meta = load_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["config"])
    g = Generator(cfg.components.generator_config(cfg.channels, cfg.width, cfg.share_encoder))
    load_module_arrays(g, arrays, "params/generator")
    return g, meta


def train_separate(cfg: TrainConfig, data: PreparedData, generator_snapshot, out_dir=None) -> TrainResult:
    """Train a fresh classifier on real samples plus samples from a frozen generator."""
    if isinstance(generator_snapshot, (str, Path)):
        generator_snapshot, _ = load_generator(generator_snapshot)
    cfg = dataclasses.replace(cfg, mode="separate", snapshot_epochs=())
    trainer = Trainer(cfg, data, out_dir, frozen_generator=generator_snapshot)
    return trainer.run()


def train_baseline(cfg: TrainConfig, data: PreparedData, out_dir=None) -> TrainResult:
    cfg = dataclasses.replace(cfg, mode="baseline", snapshot_epochs=())
    return Trainer(cfg, data, out_dir).run()


def config_json(cfg: TrainConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
