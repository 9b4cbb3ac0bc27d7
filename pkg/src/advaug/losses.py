"""Generator, discriminator and classifier objectives.

All expectations are minibatch means. Probabilities are clamped to
``[1e-7, 1 - 1e-7]`` before any logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import ConfigError

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not (v >= 0 and v < float("inf")):
                raise ConfigError(f"{name} must be a finite nonnegative number, got {v}")


# Balance factors of the generator loss, per dataset.
DEFAULT_WEIGHTS = {
    "mnist": LossWeights(alpha=0.1, beta=0.05, gamma=0.005),
    "svhn-converted": LossWeights(alpha=1.0, beta=1.0, gamma=0.0005),
    "cifar10": LossWeights(alpha=0.1, beta=0.05, gamma=0.001),
    "fmnist": LossWeights(alpha=0.1, beta=0.05, gamma=0.005),
}

# Adam learning rates: every network uses LR_COMMON except the classifier.
LR_COMMON = 0.0005
CLASSIFIER_LR = {"mnist": 0.001, "svhn-converted": 0.0005, "cifar10": 0.006, "fmnist": 0.0001}


def weights_for(dataset: str) -> LossWeights:
    try:
        return DEFAULT_WEIGHTS[dataset]
    except KeyError:
        raise ConfigError(f"no default loss weights for dataset {dataset!r}") from None


def clamp_prob(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(PROB_EPS, 1.0 - PROB_EPS)


def _mean_log(p):
    return torch.log(clamp_prob(p)).mean()


def _mean_log1m(p):
    return torch.log1p(-clamp_prob(p)).mean()


def class_prob(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Pick ``probs[n, labels[n]]`` for every row."""
    return probs.gather(1, labels.long()[:, None]).squeeze(1)


def loss_g_terms(dc_out, dd_out, cls_out_at_label, w: LossWeights) -> dict:
    """The three weighted generator terms; an absent component contributes zero."""
    zero = torch.zeros(())
    return {
        "class": -w.alpha * _mean_log(dc_out) if dc_out is not None else zero,
        "dissimilarity": -w.beta * _mean_log(dd_out) if dd_out is not None else zero,
        "adversarial": -w.gamma * _mean_log1m(cls_out_at_label) if cls_out_at_label is not None else zero,
    }


def loss_g(dc_out, dd_out, cls_out_at_label, w: LossWeights) -> torch.Tensor:
    terms = loss_g_terms(dc_out, dd_out, cls_out_at_label, w)
    return terms["class"] + terms["dissimilarity"] + terms["adversarial"]


def loss_dc(real_out: torch.Tensor, fake_out: torch.Tensor) -> torch.Tensor:
    return -_mean_log(real_out) - _mean_log1m(fake_out)


def loss_dd(same_class_pair_out: torch.Tensor, transformed_pair_out: torch.Tensor) -> torch.Tensor:
    return -_mean_log(same_class_pair_out) - _mean_log1m(transformed_pair_out)


def loss_c(cls_real: torch.Tensor, labels_real, cls_aug=None, labels_aug=None) -> torch.Tensor:
    """Cross-entropy on real samples plus, when given, on augmented ones."""
    loss = -_mean_log(class_prob(cls_real, labels_real))
    if cls_aug is not None:
        loss = loss - _mean_log(class_prob(cls_aug, labels_real if labels_aug is None else labels_aug))
    return loss


@dataclass
class LossReport:
    L_G: float
    L_DC: float
    L_DD: float
    L_C: float
    L_total: float
    g_terms: dict = field(default_factory=dict)

    def row(self) -> dict:
        out = {"L_G": self.L_G, "L_DC": self.L_DC, "L_DD": self.L_DD, "L_C": self.L_C,
               "L_total": self.L_total}
        out.update({f"L_G_{k}": v for k, v in self.g_terms.items()})
        return out


def loss_total(L_G, L_DC, L_DD, L_C, g_terms=None) -> LossReport:
    """Sum of the four objectives; for logging, never used as an update target."""
    parts = [_scalar(v) for v in (L_G, L_DC, L_DD, L_C)]
    return LossReport(*parts, L_total=parts[0] + parts[1] + parts[2] + parts[3],
                      g_terms={k: _scalar(v) for k, v in (g_terms or {}).items()})


def _scalar(v) -> float:
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
