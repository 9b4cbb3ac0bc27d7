"""The generator, the two discriminators and the classifier.

Channel counts follow the published architecture tables and are scaled
uniformly by ``width`` (1.0 reproduces the tables).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from . import stn
from .errors import DimensionError, DivergenceError
from .nn.layers import (
    Conv2d,
    Dense,
    Dropout,
    GlobalAvgPool,
    Layer,
    LeakyReLU,
    MaxPool2d,
    Projection,
    Sequential,
    Upsample2x,
    assign_names,
    conv_block,
)

NOISE_DIM = 100
NUM_CLASSES = 10
IMAGE_SIZE = 32
AFFINE_HIDDEN = 128

ENCODER_WIDTHS = ((64, 128), (256, 256), (512, 512), (1024, 1024))
DECODER_WIDTHS = ((512, 512), (256, 256), (128, 128), (64, 64))


def scaled(n: int, width: float) -> int:
    return max(1, int(round(n * width)))


def sample_noise(batch: int, generator: torch.Generator | None = None) -> torch.Tensor:
    return torch.randn(batch, NOISE_DIM, generator=generator)


def one_hot(labels: torch.Tensor, dtype=torch.float32) -> torch.Tensor:
    labels = torch.as_tensor(labels)
    if labels.numel() and (labels.min() < 0 or labels.max() >= NUM_CLASSES):
        raise ValueError(f"labels must lie in [0, {NUM_CLASSES - 1}]")
    return F.one_hot(labels.long(), NUM_CLASSES).to(dtype)


def _check_finite(x: torch.Tensor, where: str):
    if not torch.isfinite(x).all():
        raise DivergenceError(f"non-finite activations in {where}", layer=where)


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------


class Encoder(Layer):
    """U-Net down branch; image and projected noise meet after the first conv pair."""

    def __init__(self, channels, width=1.0, generator=None):
        super().__init__("encoder")
        c32 = scaled(32, width)
        self.image = Sequential(conv_block(channels, c32, batch_norm=True, generator=generator),
                                conv_block(c32, c32, batch_norm=True, generator=generator))
        self.noise = Sequential(Projection(NOISE_DIM, c32, IMAGE_SIZE, generator=generator), LeakyReLU())
        stages, c_in = [], 2 * c32
        for a, b in ENCODER_WIDTHS:
            a, b = scaled(a, width), scaled(b, width)
            stages.append(Sequential(MaxPool2d(2),
                                     conv_block(c_in, a, batch_norm=True, generator=generator),
                                     conv_block(a, b, batch_norm=True, generator=generator)))
            c_in = b
        self.stages = torch.nn.ModuleList(stages)
        self.skip_channels = [2 * c32] + [scaled(b, width) for _, b in ENCODER_WIDTHS]

    def forward(self, x, z):
        h = torch.cat([self.image(x), self.noise(z)], dim=1)
        feats = [h]
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats


class Decoder(Layer):
    """U-Net up branch: upsample, concatenate the matching skip, two convs; final 1x1 conv."""

    def __init__(self, out_channels, skip_channels, width=1.0, use_skips=True, zero_init_output=True,
                 generator=None):
        super().__init__("decoder")
        self.use_skips = use_skips
        c_in = skip_channels[-1]
        levels = []
        for (a, b), skip in zip(DECODER_WIDTHS, reversed(skip_channels[:-1])):
            a, b = scaled(a, width), scaled(b, width)
            extra = skip if use_skips else 0
            levels.append(Sequential(conv_block(c_in + extra, a, batch_norm=True, generator=generator),
                                     conv_block(a, b, batch_norm=True, generator=generator)))
            c_in = b
        self.levels = torch.nn.ModuleList(levels)
        self.up = Upsample2x()
        self.out = Conv2d(c_in, out_channels, kernel=1, zero_init=zero_init_output, generator=generator)

    def forward(self, feats):
        h = feats[-1]
        skips = feats[-2::-1]
        for i, level in enumerate(self.levels):
            h = self.up(h)
            if self.use_skips:
                h = torch.cat([h, skips[i]], dim=1)
            h = level(h)
        return self.out(h)


class AffineHead(Layer):
    """Two dense layers mapping the flattened bottleneck to a residual on the identity map."""

    def __init__(self, in_features, hidden=AFFINE_HIDDEN, generator=None):
        super().__init__("affine_head")
        self.hidden = Dense(in_features, hidden, generator=generator)
        self.act = LeakyReLU()
        self.out = Dense(hidden, 6, zero_init=True, generator=generator)
        self.register_buffer("identity", torch.tensor(stn.IDENTITY))

    def forward(self, bottleneck):
        return self.identity + self.out(self.act(self.hidden(bottleneck.flatten(1))))

    @staticmethod
    def kink_pattern(theta):
        """Source pixel cells read by the warp; the sampler is non-smooth where they change."""
        grid = stn.affine_grid(theta, IMAGE_SIZE, IMAGE_SIZE)
        return torch.floor((grid + 1.0) * (0.5 * (IMAGE_SIZE - 1))).long()


@dataclass
class GeneratorConfig:
    channels: int = 1
    width: float = 1.0
    use_stn: bool = True
    use_unet: bool = True
    noise_only: bool = False
    share_encoder: bool = True
    zero_init_output: bool = True


class Generator(Layer):
    """Affine warp predicted from (x, z), followed by a U-Net refinement of the warped image.

    Components can be switched off for the ablation variants; with
    ``noise_only`` the decoder draws images from (z, label) alone.
    """

    def __init__(self, config: GeneratorConfig, generator=None):
        super().__init__("generator")
        self.config = config
        w, ch = config.width, config.channels
        if config.noise_only:
            bottleneck = scaled(ENCODER_WIDTHS[-1][1], w)
            skip_channels = [0] * len(ENCODER_WIDTHS) + [bottleneck]
            self.code = Sequential(Projection(NOISE_DIM + NUM_CLASSES, bottleneck, IMAGE_SIZE // 16,
                                              generator=generator), LeakyReLU())
            self.decoder = Decoder(ch, skip_channels, w, use_skips=False, zero_init_output=False,
                                   generator=generator)
        else:
            if config.use_unet or config.use_stn:
                self.encoder = Encoder(ch, w, generator)
            if config.use_stn:
                if not config.share_encoder:
                    self.stn_encoder = Encoder(ch, w, generator)
                bottleneck = self.encoder.skip_channels[-1] * (IMAGE_SIZE // 16) ** 2
                self.affine_head = AffineHead(bottleneck, generator=generator)
            if config.use_unet:
                self.decoder = Decoder(ch, self.encoder.skip_channels, w,
                                       zero_init_output=config.zero_init_output, generator=generator)
        assign_names(self, "generator")

    def predict_theta(self, x, z):
        encoder = self.encoder if self.config.share_encoder else self.stn_encoder
        return self.affine_head(encoder(x, z)[-1])

    def forward(self, x, z, y=None):
        if x.dim() != 4 or x.shape[1] != self.config.channels or x.shape[-2:] != (IMAGE_SIZE, IMAGE_SIZE):
            raise DimensionError(f"generator expects (B, {self.config.channels}, 32, 32), got {tuple(x.shape)}",
                                 layer="generator")
        if z.shape != (x.shape[0], NOISE_DIM):
            raise DimensionError(f"noise must be ({x.shape[0]}, {NOISE_DIM}), got {tuple(z.shape)}",
                                 layer="generator")
        cfg = self.config
        theta = stn.identity_theta(x.shape[0], x.dtype)
        if cfg.noise_only:
            if y is None:
                raise ValueError("a noise-only generator needs labels")
            code = self.code(torch.cat([z, one_hot(y, x.dtype)], dim=1))
            out = self.decoder([code])
        else:
            out = x
            if cfg.use_stn:
                theta = self.predict_theta(x, z)
                out = stn.warp(x, theta)
            if cfg.use_unet:
                out = out + self.decoder(self.encoder(out, z))
        _check_finite(out, "generator")
        return out, theta


# ---------------------------------------------------------------------------
# Discriminators and classifier
# ---------------------------------------------------------------------------


def _trunk(in_ch, width, head_convs, generator, dropout_generator):
    """Shared conv body: 96-wide group, dropout, 192-wide group, dropout, head convs.

    The last conv of each of the two first groups has stride 2.
    """
    c96, c192 = scaled(96, width), scaled(192, width)
    wn = dict(weight_norm=True, generator=generator)
    layers = [conv_block(in_ch, c96, **wn), conv_block(c96, c96, stride=2, **wn),
              Dropout(0.5, dropout_generator),
              conv_block(c96, c192, **wn), conv_block(c192, c192, **wn), conv_block(c192, c192, stride=2, **wn),
              Dropout(0.5, dropout_generator)]
    for k in head_convs:
        layers.append(conv_block(c192, c192, kernel=k, **wn))
    layers.append(GlobalAvgPool())
    return Sequential(*layers, name="trunk")


class ClassDiscriminator(Layer):
    """Probability that an image is a real member of the given class."""

    def __init__(self, channels=1, width=1.0, generator=None, dropout_generator=None):
        super().__init__("dc")
        c48 = scaled(48, width)
        self.image = conv_block(channels, c48, generator=generator)
        self.label = Sequential(Projection(NUM_CLASSES, c48, IMAGE_SIZE, generator=generator), LeakyReLU())
        self.trunk = _trunk(2 * c48, width, (3, 1, 1), generator, dropout_generator)
        self.head = Dense(scaled(192, width), 1, generator=generator)
        assign_names(self, "dc")

    def logits(self, x, y_onehot):
        h = torch.cat([self.image(x), self.label(y_onehot)], dim=1)
        return self.head(self.trunk(h)).squeeze(1)

    def forward(self, x, y):
        if len(x) != len(y):
            raise DimensionError("image and label batches differ in size", layer="dc")
        return torch.sigmoid(self.logits(x, one_hot(y, x.dtype)))


class DissimilarityDiscriminator(Layer):
    """Probability that ``(a, b)`` are two distinct samples of one class."""

    def __init__(self, channels=1, width=1.0, generator=None, dropout_generator=None):
        super().__init__("dd")
        c48 = scaled(48, width)
        self.first = conv_block(channels, c48, generator=generator)
        self.second = conv_block(channels, c48, generator=generator)
        self.trunk = _trunk(2 * c48, width, (3, 1, 1), generator, dropout_generator)
        self.head = Dense(scaled(192, width), 1, generator=generator)
        assign_names(self, "dd")

    def forward(self, a, b):
        if a.shape != b.shape:
            raise DimensionError(f"pair shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}", layer="dd")
        h = torch.cat([self.first(a), self.second(b)], dim=1)
        return torch.sigmoid(self.head(self.trunk(h)).squeeze(1))


class Classifier(Layer):
    def __init__(self, channels=1, width=1.0, generator=None, dropout_generator=None):
        super().__init__("classifier")
        c96 = scaled(96, width)
        wn = dict(weight_norm=True, generator=generator)
        self.stem = conv_block(channels, c96, **wn)
        self.trunk = _trunk(c96, width, (3, 3, 3), generator, dropout_generator)
        self.head = Dense(scaled(192, width), NUM_CLASSES, generator=generator)
        assign_names(self, "classifier")

    def logits(self, x):
        return self.head(self.trunk(self.stem(x)))

    def forward(self, x):
        return torch.softmax(self.logits(x), dim=1)


# op-style aliases


def generator_forward(g: Generator, x, z, y=None):
    return g(x, z, y)


def dc_forward(d: ClassDiscriminator, x, y):
    return d(x, y)


def dd_forward(d: DissimilarityDiscriminator, a, b):
    return d(a, b)


def classifier_forward(c: Classifier, x):
    return c(x)


# ---------------------------------------------------------------------------
# Shape audit
# ---------------------------------------------------------------------------


def shape_table(module: torch.nn.Module) -> list[tuple[str, str, tuple]]:
    """(parameter path, layer kind, effective kernel shape) for every weight-bearing layer."""
    rows = []
    for path, sub in module.named_modules():
        if isinstance(sub, (Conv2d, Dense)):
            if isinstance(sub, Conv2d):
                shape = (sub.out_ch, sub.in_ch, sub.kernel, sub.kernel)
                kind = f"conv{sub.kernel}x{sub.kernel}" + ("/s2" if sub.stride == 2 else "")
                kind += ",wn" if sub.weight_norm else ""
            else:
                shape = (sub.out_features, sub.in_features)
                kind = "projection" if isinstance(sub, Projection) else "dense"
            rows.append((path, kind, shape))
    return rows


def describe(networks: dict) -> str:
    lines = []
    for net_name, net in networks.items():
        n_params = sum(p.numel() for p in net.parameters())
        lines.append(f"== {net_name} ({n_params:,} parameters)")
        for path, kind, shape in shape_table(net):
            lines.append(f"  {path:<44} {kind:<16} {'x'.join(map(str, shape))}")
    return "\n".join(lines)
