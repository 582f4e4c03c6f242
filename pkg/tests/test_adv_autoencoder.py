import math

import numpy as np
import pytest
import torch

from airfi.adv_autoencoder import (LEAKY_SLOPE, Decoder, Discriminator, DiscriminatorSpec, Encoder, EncoderSpec,
                                   PriorSpec, adversarial_loss, generator_loss, reconstruction_loss, sample_prior)


def _leaky(a):
    return np.where(a > 0, a, LEAKY_SLOPE * a)


def _conv1d_loop(x, w, b, stride, pad):
    """x [C_in, L], w [C_out, C_in, K] -> [C_out, L_out], one output position at a time."""
    c_in, length = x.shape
    k = w.shape[2]
    xp = np.zeros((c_in, length + 2 * pad))
    xp[:, pad:pad + length] = x
    l_out = (length + 2 * pad - k) // stride + 1
    out = np.empty((w.shape[0], l_out))
    for t in range(l_out):
        window = xp[:, t * stride:t * stride + k]
        for o in range(w.shape[0]):
            out[o, t] = np.sum(w[o] * window) + b[o]
    return out


def _conv_transpose1d_loop(x, w, b, stride, pad, out_pad):
    """x [C_in, L], w [C_in, C_out, K]: scatter every input position into the output."""
    c_in, length = x.shape
    k = w.shape[2]
    full = np.zeros((w.shape[1], (length - 1) * stride + k + out_pad))
    for i in range(length):
        for j in range(k):
            full[:, i * stride + j] += w[:, :, j].T @ x[:, i]
    l_out = (length - 1) * stride - 2 * pad + k + out_pad
    return full[:, pad:pad + l_out] + b[:, None]


def _np(t):
    return t.detach().double().numpy()


def test_encoder_matches_loop_oracle():
    torch.manual_seed(0)
    enc = Encoder().double()
    x = torch.randn(1, 114, 3, 500, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    h = _np(x).reshape(342, 500)
    convs = [m for m in enc.convs if isinstance(m, torch.nn.Conv1d)]
    for conv, (_, k, s) in zip(convs, enc.spec.conv_stages):
        h = _leaky(_conv1d_loop(h, _np(conv.weight), _np(conv.bias), s, k // 2))
    z = _np(enc.fc.weight) @ h.reshape(-1) + _np(enc.fc.bias)
    np.testing.assert_allclose(_np(enc(x))[0], z, atol=1e-5, rtol=0)


def test_decoder_matches_loop_oracle():
    torch.manual_seed(0)
    dec = Decoder().double()
    z = torch.randn(1, 128, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
    spec = dec.spec
    h = _leaky(_np(dec.fc.weight) @ _np(z)[0] + _np(dec.fc.bias)).reshape(spec.conv_stages[-1][0], -1)
    deconvs = [m for m in dec.deconvs if isinstance(m, torch.nn.ConvTranspose1d)]
    for i, m in enumerate(deconvs):
        h = _conv_transpose1d_loop(h, _np(m.weight), _np(m.bias), m.stride[0], m.padding[0], m.output_padding[0])
        if i < len(deconvs) - 1:
            h = _leaky(h)
    np.testing.assert_allclose(_np(dec(z))[0], h.reshape(114, 3, 500), atol=1e-5, rtol=0)


def test_shapes_and_determinism():
    torch.manual_seed(3)
    enc, dec = Encoder(), Decoder()
    x = torch.randn(2, 114, 3, 500)
    z1, z2 = enc(x), enc(x.clone())
    assert z1.shape == (2, 128)
    assert torch.equal(z1, z2)
    assert torch.isfinite(z1).all()
    assert dec(z1).shape == x.shape
    assert EncoderSpec().lengths() == [500, 250, 125, 63]
    assert EncoderSpec().flat_size == 64 * 63


def test_shape_errors():
    with pytest.raises(ValueError):
        Encoder()(torch.zeros(1, 114, 3, 499))
    with pytest.raises(ValueError):
        Decoder()(torch.zeros(1, 127))
    with pytest.raises(ValueError):
        EncoderSpec(latent_dim=0)


def test_custom_stages_round_trip_shape():
    spec = EncoderSpec(conv_stages=((8, 7, 3), (4, 3, 2)), latent_dim=16)
    x = torch.randn(3, 114, 3, 500)
    assert Decoder(spec)(Encoder(spec)(x)).shape == x.shape


def test_laplace_prior_moments():
    h = sample_prior(1000, 100, PriorSpec(), torch.Generator().manual_seed(0), torch.float64)
    assert abs(h.mean().item()) < 0.02
    assert abs(h.var().item() - 2.0) < 0.1


def test_prior_determinism_and_count():
    a = sample_prior(5, 4, generator=torch.Generator().manual_seed(9))
    b = sample_prior(5, 4, generator=torch.Generator().manual_seed(9))
    assert torch.equal(a, b)
    with pytest.raises(ValueError):
        sample_prior(0, 4)


def test_other_priors():
    g = torch.Generator().manual_seed(1)
    u = sample_prior(20000, 5, PriorSpec("uniform", scale=2.0), g, torch.float64)
    assert u.abs().max() <= 2.0
    assert abs(u.var().item() - 4 / 3) < 0.05
    n = sample_prior(20000, 5, PriorSpec("gaussian"), g, torch.float64)
    assert abs(n.var().item() - 1.0) < 0.05
    with pytest.raises(ValueError):
        PriorSpec("cauchy")


def test_adversarial_loss_half():
    half = torch.full((7,), 0.5, dtype=torch.float64)
    assert adversarial_loss(half, half[:3]).item() == pytest.approx(2 * math.log(0.5), abs=1e-12)


def test_adversarial_loss_perfect_discriminator():
    val = adversarial_loss(torch.ones(4), torch.zeros(4)).item()
    assert -1e-6 < val <= 0.0
    assert math.isfinite(adversarial_loss(torch.zeros(4), torch.ones(4)).item())


def test_adversarial_loss_loop_oracle():
    g = torch.Generator().manual_seed(4)
    dp = torch.rand(13, generator=g, dtype=torch.float64)
    dz = torch.rand(9, generator=g, dtype=torch.float64)
    want = sum(math.log(v) for v in dp.tolist()) / 13 + sum(math.log(1 - v) for v in dz.tolist()) / 9
    assert adversarial_loss(dp, dz).item() == pytest.approx(want, abs=1e-10)
    assert generator_loss(dz).item() == pytest.approx(-sum(math.log(v) for v in dz.tolist()) / 9, abs=1e-10)
    with pytest.raises(ValueError):
        adversarial_loss(dp[:0], dz)


def test_discriminator_output_range():
    torch.manual_seed(0)
    d = Discriminator(4, DiscriminatorSpec((3,)))
    with torch.no_grad():
        d.net[-1].bias.fill_(1e4)
    p = d(torch.randn(5, 4))
    assert torch.all(p < 1) and torch.all(p > 0)


def test_reconstruction_closed_form():
    x = torch.zeros(1, 114, 3, 500, dtype=torch.float64)
    assert reconstruction_loss([x + 1], [x]).item() == 171000.0
    assert reconstruction_loss([x], [x]).item() == 0.0


def test_reconstruction_loop_oracle():
    g = torch.Generator().manual_seed(5)
    xs = [torch.randn(m, 2, 3, dtype=torch.float64, generator=g) for m in (2, 3)]
    xh = [torch.randn(m, 2, 3, dtype=torch.float64, generator=g) for m in (2, 3)]
    want = 0.0
    for a, b in zip(xh, xs):
        per = []
        for i in range(a.shape[0]):
            per.append(sum((float(a[i].flatten()[j]) - float(b[i].flatten()[j])) ** 2 for j in range(6)))
        want += sum(per) / len(per)
    assert reconstruction_loss(xh, xs).item() == pytest.approx(want, abs=1e-8)
    with pytest.raises(ValueError):
        reconstruction_loss(xh, xs[:1])
    with pytest.raises(ValueError):
        reconstruction_loss([xh[0]], [xs[1]])


def _fd_check(loss_fn, params, eps=1e-4, tol=1e-4, probes=6):
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    rng = np.random.default_rng(0)
    for p, g in zip(params, grads):
        flat = p.data.view(-1)
        for idx in rng.choice(flat.numel(), size=min(probes, flat.numel()), replace=False):
            old = flat[idx].item()
            flat[idx] = old + eps
            up = loss_fn().item()
            flat[idx] = old - eps
            down = loss_fn().item()
            flat[idx] = old
            fd = (up - down) / (2 * eps)
            an = g.view(-1)[idx].item()
            assert abs(fd - an) <= tol * max(abs(fd), abs(an), 1e-6), (fd, an)


def test_adversarial_gradient_matches_finite_differences():
    torch.manual_seed(0)
    d = Discriminator(4, DiscriminatorSpec((5, 3))).double()
    h = torch.randn(2, 4, dtype=torch.float64)
    z = torch.randn(2, 4, dtype=torch.float64)
    _fd_check(lambda: adversarial_loss(d(h), d(z)), list(d.parameters()))
    _fd_check(lambda: generator_loss(d(z)), list(d.parameters()))


def test_reconstruction_gradient_matches_finite_differences():
    torch.manual_seed(0)
    spec = EncoderSpec(conv_stages=((2, 3, 2),), latent_dim=4)
    dec = Decoder(spec).double()
    z = torch.randn(2, 4, dtype=torch.float64)
    x = torch.randn(2, 114, 3, 500, dtype=torch.float64)
    _fd_check(lambda: reconstruction_loss([dec(z)], [x]), list(dec.parameters()))
