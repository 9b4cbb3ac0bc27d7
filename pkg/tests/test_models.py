import pytest
import torch

from advaug import stn
from advaug.errors import DimensionError
from advaug.models import (
    NOISE_DIM,
    Classifier,
    ClassDiscriminator,
    DissimilarityDiscriminator,
    Generator,
    GeneratorConfig,
    one_hot,
    shape_table,
)

GEN = lambda s=0: torch.Generator().manual_seed(s)  # noqa: E731


def _x(b=2, c=1, seed=0):
    return torch.randn(b, c, 32, 32, generator=GEN(seed))


def _convs(module, prefix):
    return [(shape[0], shape[2]) for path, kind, shape in shape_table(module)
            if path.startswith(prefix) and kind.startswith("conv")]


# Layer-by-layer (output channels, kernel) read off the architecture tables at width 1.0.
TRUNK_DISC = [(96, 3), (96, 3), (192, 3), (192, 3), (192, 3), (192, 3), (192, 1), (192, 1)]
TRUNK_CLS = [(96, 3), (96, 3), (192, 3), (192, 3), (192, 3), (192, 3), (192, 3), (192, 3)]
ENCODER = [(32, 3), (32, 3), (64, 3), (128, 3), (256, 3), (256, 3), (512, 3), (512, 3), (1024, 3), (1024, 3)]
DECODER = [(512, 3), (512, 3), (256, 3), (256, 3), (128, 3), (128, 3), (64, 3), (64, 3), (1, 1)]


def test_parameter_audit_full_width():
    dc = ClassDiscriminator(3, 1.0, GEN())
    assert _convs(dc, "image") == [(48, 3)] and _convs(dc, "trunk") == TRUNK_DISC
    assert dict((p, s) for p, _, s in shape_table(dc))["label.layers.0"] == (48 * 32 * 32, 10)
    assert dict((p, s) for p, _, s in shape_table(dc))["head"] == (1, 192)
    dd = DissimilarityDiscriminator(3, 1.0, GEN())
    assert _convs(dd, "first") == [(48, 3)] and _convs(dd, "second") == [(48, 3)]
    assert _convs(dd, "trunk") == TRUNK_DISC
    c = Classifier(3, 1.0, GEN())
    assert _convs(c, "stem") + _convs(c, "trunk") == [(96, 3)] + TRUNK_CLS
    assert dict((p, s) for p, _, s in shape_table(c))["head"] == (10, 192)
    g = Generator(GeneratorConfig(channels=3, width=1.0), GEN())
    assert _convs(g, "encoder") == ENCODER
    assert _convs(g, "decoder") == DECODER[:-1] + [(3, 1)]
    assert dict((p, s) for p, _, s in shape_table(g))["encoder.noise.layers.0"] == (32 * 32 * 32, NOISE_DIM)
    # weight norm on every trunk conv, never on the generator
    assert all(",wn" in k for p, k, _ in shape_table(c) if k.startswith("conv"))
    assert not any(",wn" in k for _, k, _ in shape_table(g))


def test_generator_identity_start_and_shapes():
    g = Generator(GeneratorConfig(channels=1, width=0.25), GEN())
    x, z = _x(), torch.randn(2, NOISE_DIM, generator=GEN(1))
    out, theta = g(x, z)
    assert out.shape == (2, 1, 32, 32)
    assert torch.equal(theta, stn.identity_theta(2))
    assert torch.allclose(out, stn.warp(x, theta)) and (out - x).abs().max() < 1e-5


def test_generator_rejects_bad_shapes():
    g = Generator(GeneratorConfig(channels=1, width=0.125), GEN())
    with pytest.raises(DimensionError):
        g(torch.zeros(2, 1, 28, 28), torch.zeros(2, NOISE_DIM))
    with pytest.raises(DimensionError):
        g(torch.zeros(2, 1, 32, 32), torch.zeros(2, 7))


def test_eval_determinism_all_networks():
    x, z, y = _x(4), torch.randn(4, NOISE_DIM, generator=GEN(2)), torch.tensor([0, 3, 5, 9])
    nets = [Generator(GeneratorConfig(width=0.125), GEN()), ClassDiscriminator(1, 0.125, GEN(), GEN(5)),
            DissimilarityDiscriminator(1, 0.125, GEN(), GEN(5)), Classifier(1, 0.125, GEN(), GEN(5))]
    calls = [lambda n: n(x, z)[0], lambda n: n(x, y), lambda n: n(x, x.flip(0)), lambda n: n(x)]
    for net, call in zip(nets, calls):
        net.eval()
        assert torch.equal(call(net), call(net))


def test_zero_init_heads():
    x, y = _x(3), torch.tensor([1, 2, 3])
    dc, dd, c = (ClassDiscriminator(1, 0.125, GEN()), DissimilarityDiscriminator(1, 0.125, GEN()),
                 Classifier(1, 0.125, GEN()))
    for net in (dc, dd, c):
        with torch.no_grad():
            net.head.weight.zero_()
        net.eval()
    assert torch.equal(dc(x, y), torch.full((3,), 0.5))
    assert torch.equal(dd(x, x), torch.full((3,), 0.5))
    assert torch.allclose(c(x), torch.full((3, 10), 0.1))


def test_classifier_softmax_properties():
    c = Classifier(1, 0.125, GEN())
    c.eval()
    x = _x(5)
    p = c(x)
    assert torch.allclose(p.sum(1), torch.ones(5), atol=1e-6)
    logits = c.logits(x)
    assert torch.equal(torch.softmax(logits + 3.0, 1).argmax(1), p.argmax(1))


def test_gradient_probes_on_conditioning_inputs():
    dc = ClassDiscriminator(1, 0.125, GEN())
    dc.eval()
    onehot = one_hot(torch.tensor([2, 7])).requires_grad_(True)
    (g,) = torch.autograd.grad(dc.logits(_x(), onehot).sum(), [onehot])
    assert g.abs().sum() > 0
    dd = DissimilarityDiscriminator(1, 0.125, GEN())
    dd.eval()
    b = _x(seed=3).requires_grad_(True)
    (g,) = torch.autograd.grad(dd(_x(), b).sum(), [b])
    assert g.abs().sum() > 0


def test_one_hot_range():
    with pytest.raises(ValueError):
        one_hot(torch.tensor([10]))


def test_ablation_generator_variants():
    x, z, y = _x(), torch.randn(2, NOISE_DIM), torch.tensor([1, 4])
    noise_only = Generator(GeneratorConfig(use_stn=False, use_unet=False, noise_only=True, width=0.125), GEN())
    out, theta = noise_only(x, z, y)
    assert out.shape == x.shape and torch.equal(theta, stn.identity_theta(2))
    assert not hasattr(noise_only, "encoder")
    with pytest.raises(ValueError):
        noise_only(x, z)
    stn_only = Generator(GeneratorConfig(use_unet=False, width=0.125), GEN())
    assert not hasattr(stn_only, "decoder") and hasattr(stn_only, "affine_head")
    unshared = Generator(GeneratorConfig(share_encoder=False, width=0.125), GEN())
    assert unshared.stn_encoder is not unshared.encoder
