"""Convolutional encoder/decoder, latent discriminator and their losses.

The encoder treats the 114 x 3 subcarrier/antenna grid as input channels and
convolves along the packet axis. Latent codes are pushed toward a prior
(Laplace by default) by a discriminator that tells prior draws from codes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
from torch import nn

from .csi_core import NUM_ANTENNAS, NUM_PACKETS, NUM_SUBCARRIERS

IN_CHANNELS = NUM_SUBCARRIERS * NUM_ANTENNAS
LEAKY_SLOPE = 0.2
D_CLAMP = 1e-7


@dataclass(frozen=True)
class EncoderSpec:
    conv_stages: tuple[tuple[int, int, int], ...] = ((16, 5, 2), (32, 5, 2), (64, 3, 2))
    latent_dim: int = 128
    in_channels: int = IN_CHANNELS
    length: int = NUM_PACKETS

    def __post_init__(self):
        object.__setattr__(self, "conv_stages", tuple(tuple(int(v) for v in s) for s in self.conv_stages))
        if self.latent_dim <= 0:
            raise ValueError("latent_dim must be positive")
        if not self.conv_stages:
            raise ValueError("need at least one convolution stage")

    def lengths(self) -> list[int]:
        """Sequence length before the first stage and after every stage."""
        out = [self.length]
        for _, k, s in self.conv_stages:
            out.append((out[-1] + 2 * (k // 2) - k) // s + 1)
        return out

    @property
    def flat_size(self) -> int:
        return self.conv_stages[-1][0] * self.lengths()[-1]


@dataclass(frozen=True)
class PriorSpec:
    family: str = "laplace"
    location: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in ("laplace", "gaussian", "uniform"):
            raise ValueError(f"unknown prior family {self.family!r}")
        if self.scale <= 0:
            raise ValueError("prior scale must be positive")


@dataclass(frozen=True)
class DiscriminatorSpec:
    hidden_widths: tuple[int, ...] = (128, 64)


class Encoder(nn.Module):
    def __init__(self, spec: EncoderSpec = EncoderSpec()):
        super().__init__()
        self.spec = spec
        layers: list[nn.Module] = []
        ch = spec.in_channels
        for out_ch, k, s in spec.conv_stages:
            layers += [nn.Conv1d(ch, out_ch, k, stride=s, padding=k // 2), nn.LeakyReLU(LEAKY_SLOPE)]
            ch = out_ch
        self.convs = nn.Sequential(*layers)
        self.fc = nn.Linear(spec.flat_size, spec.latent_dim)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        """He initialization for the leaky units, so unit-variance input gives
        codes of roughly unit scale (the scale of the prior) instead of the
        framework default, which shrinks the signal at every layer."""
        for m in self.convs:
            if isinstance(m, nn.Conv1d):
                nn.init.kaiming_normal_(m.weight, a=LEAKY_SLOPE, nonlinearity="leaky_relu")
                nn.init.zeros_(m.bias)
        nn.init.kaiming_normal_(self.fc.weight, nonlinearity="linear")
        nn.init.zeros_(self.fc.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-3:] != (NUM_SUBCARRIERS, NUM_ANTENNAS, self.spec.length):
            raise ValueError(f"expected [..., 114, 3, {self.spec.length}] input, got {tuple(x.shape)}")
        h = self.convs(x.reshape(-1, self.spec.in_channels, self.spec.length))
        return self.fc(h.flatten(1))


class Decoder(nn.Module):
    """Mirror of the encoder: linear lift, then transposed convolutions."""

    def __init__(self, spec: EncoderSpec = EncoderSpec()):
        super().__init__()
        self.spec = spec
        lengths = spec.lengths()
        stages = spec.conv_stages
        self.fc = nn.Linear(spec.latent_dim, spec.flat_size)
        layers: list[nn.Module] = []
        for idx in reversed(range(len(stages))):
            _, k, s = stages[idx]
            in_ch = stages[idx][0]
            out_ch = stages[idx - 1][0] if idx > 0 else spec.in_channels
            l_in, l_out = lengths[idx + 1], lengths[idx]
            pad = k // 2
            extra = l_out - ((l_in - 1) * s - 2 * pad + k)
            layers.append(nn.ConvTranspose1d(in_ch, out_ch, k, stride=s, padding=pad, output_padding=extra))
            if idx > 0:
                layers.append(nn.LeakyReLU(LEAKY_SLOPE))
        self.deconvs = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.spec.latent_dim:
            raise ValueError(f"expected latent dim {self.spec.latent_dim}, got {z.shape[-1]}")
        lengths = self.spec.lengths()
        h = self.fc(z.reshape(-1, self.spec.latent_dim))
        h = nn.functional.leaky_relu(h, LEAKY_SLOPE)
        h = h.reshape(-1, self.spec.conv_stages[-1][0], lengths[-1])
        out = self.deconvs(h)
        return out.reshape(-1, NUM_SUBCARRIERS, NUM_ANTENNAS, self.spec.length)


class Discriminator(nn.Module):
    """MLP returning the probability that a code was drawn from the prior."""

    def __init__(self, latent_dim: int = 128, spec: DiscriminatorSpec = DiscriminatorSpec()):
        super().__init__()
        layers: list[nn.Module] = []
        width = latent_dim
        for w in spec.hidden_widths:
            layers += [nn.Linear(width, w), nn.LeakyReLU(LEAKY_SLOPE)]
            width = w
        layers.append(nn.Linear(width, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        p = torch.sigmoid(self.net(z)).squeeze(-1)
        return p.clamp(D_CLAMP, 1 - D_CLAMP)


def sample_prior(count: int, dim: int, prior: PriorSpec = PriorSpec(),
                 generator: torch.Generator | None = None, dtype=torch.float32) -> torch.Tensor:
    """``count`` i.i.d. prior vectors of length ``dim``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if prior.family == "laplace":
        # inverse CDF of Laplace(loc, scale) from U(-1/2, 1/2)
        u = torch.rand(count, dim, generator=generator, dtype=torch.float64) - 0.5
        u = u.clamp(-0.5 + 1e-12, 0.5 - 1e-12)
        h = prior.location - prior.scale * torch.sign(u) * torch.log1p(-2 * u.abs())
    elif prior.family == "gaussian":
        h = prior.location + prior.scale * torch.randn(count, dim, generator=generator, dtype=torch.float64)
    else:
        u = torch.rand(count, dim, generator=generator, dtype=torch.float64)
        h = prior.location + prior.scale * (2 * u - 1)
    return h.to(dtype)


def adversarial_loss(d_prior: torch.Tensor, d_codes: torch.Tensor) -> torch.Tensor:
    """``mean log D(h) + mean log(1 - D(z))`` from discriminator outputs.

    The discriminator ascends this quantity; outputs are clamped to
    ``[1e-7, 1 - 1e-7]`` so the logs stay finite.
    """
    if d_prior.numel() == 0 or d_codes.numel() == 0:
        raise ValueError("adversarial loss needs non-empty prior and code batches")
    d_prior = d_prior.clamp(D_CLAMP, 1 - D_CLAMP)
    d_codes = d_codes.clamp(D_CLAMP, 1 - D_CLAMP)
    return torch.log(d_prior).mean() + torch.log1p(-d_codes).mean()


def generator_loss(d_codes: torch.Tensor) -> torch.Tensor:
    """Non-saturating encoder objective ``-mean log D(Q(x))``."""
    return -torch.log(d_codes.clamp(D_CLAMP, 1 - D_CLAMP)).mean()


def reconstruction_loss(x_hats: Sequence[torch.Tensor], xs: Sequence[torch.Tensor]) -> torch.Tensor:
    """Sum over environments of the per-sample squared L2 error, averaged within each environment."""
    if len(x_hats) != len(xs):
        raise ValueError("need one reconstruction per environment batch")
    total = None
    for x_hat, x in zip(x_hats, xs):
        if x_hat.shape != x.shape:
            raise ValueError(f"shape mismatch {tuple(x_hat.shape)} vs {tuple(x.shape)}")
        per_sample = ((x_hat - x) ** 2).reshape(x.shape[0], -1).sum(dim=1)
        term = per_sample.mean()
        total = term if total is None else total + term
    if total is None:
        raise ValueError("no environments given")
    return total
