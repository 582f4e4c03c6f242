"""Label-dependent augmentation of latent codes.

``z' = alpha * z + beta + eps`` with ``alpha ~ N(1, sigma)``, ``beta ~ N(0, sigma)``
element-wise and ``eps`` drawn from a zero-mean Gaussian whose diagonal
covariance is tracked per class with a moving average.

The training loop feeds the average with ``alpha * z + beta`` rather than the
final ``z'``: ``z'`` already carries ``eps``, so averaging it would add the
current covariance back into itself and grow without bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class FeatAugConfig:
    sigma: float = 0.1
    lambda_discount: float = 0.9
    enabled: bool = True

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0.0 <= self.lambda_discount <= 1.0:
            raise ValueError("lambda_discount must lie in [0, 1]")


class ClasswiseCovariance:
    """Per-class diagonal covariance, ``diag[c]`` = variances of class ``c``."""

    def __init__(self, num_classes: int, dim: int, dtype=torch.float32):
        self.diag = torch.zeros(num_classes, dim, dtype=dtype)

    @classmethod
    def from_tensor(cls, diag: torch.Tensor) -> "ClasswiseCovariance":
        if torch.any(diag < 0):
            raise ValueError("covariance diagonals must be non-negative")
        cov = cls(diag.shape[0], diag.shape[1], diag.dtype)
        cov.diag = diag.detach().clone()
        return cov

    @property
    def num_classes(self) -> int:
        return self.diag.shape[0]

    def clone(self) -> "ClasswiseCovariance":
        return ClasswiseCovariance.from_tensor(self.diag)


def sample_scale_bias(shape, sigma: float, generator: torch.Generator | None = None,
                      dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    alpha = 1.0 + sigma * torch.randn(shape, generator=generator, dtype=dtype)
    beta = sigma * torch.randn(shape, generator=generator, dtype=dtype)
    return alpha, beta


def sample_regularizer(labels: torch.Tensor, cov: ClasswiseCovariance,
                       generator: torch.Generator | None = None) -> torch.Tensor:
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.numel() and (labels.min() < 0 or labels.max() >= cov.num_classes):
        raise ValueError(f"labels must lie in [0, {cov.num_classes})")
    noise = torch.randn(labels.shape[0], cov.diag.shape[1], generator=generator, dtype=cov.diag.dtype)
    return noise * cov.diag[labels].sqrt()


def combine(z: torch.Tensor, alpha: torch.Tensor, beta: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """``alpha * z + beta + eps``, element-wise."""
    return alpha * z + beta + eps


def augment_features(z: torch.Tensor, labels: torch.Tensor, config: FeatAugConfig,
                     cov: ClasswiseCovariance, generator: torch.Generator | None = None) -> torch.Tensor:
    return augment_features_split(z, labels, config, cov, generator)[0]


def augment_features_split(z: torch.Tensor, labels: torch.Tensor, config: FeatAugConfig,
                           cov: ClasswiseCovariance, generator: torch.Generator | None = None
                           ) -> tuple[torch.Tensor, torch.Tensor]:
    """``(z', alpha * z + beta)``; both are ``z`` when disabled."""
    if not config.enabled:
        return z, z
    if z.ndim != 2 or z.shape[0] != len(labels) or z.shape[1] != cov.diag.shape[1]:
        raise ValueError(f"codes {tuple(z.shape)} do not match {len(labels)} labels / dim {cov.diag.shape[1]}")
    alpha, beta = sample_scale_bias(z.shape, config.sigma, generator, z.dtype)
    eps = sample_regularizer(labels, cov, generator).to(z.dtype)
    scaled = combine(z, alpha, beta, torch.zeros_like(z))
    return scaled + eps, scaled


def update_class_covariance(cov: ClasswiseCovariance, z_aug: torch.Tensor, labels: torch.Tensor,
                            lambda_discount: float) -> ClasswiseCovariance:
    """Moving-average update of the rows whose class has at least two codes in the batch.

    Mutates ``cov`` in place and returns it.
    """
    if z_aug.shape[0] == 0:
        raise ValueError("empty batch")
    z_aug = z_aug.detach().to(cov.diag.dtype)
    labels = torch.as_tensor(labels, dtype=torch.long)
    for c in torch.unique(labels).tolist():
        rows = z_aug[labels == c]
        if rows.shape[0] < 2:
            continue
        var = rows.var(dim=0, unbiased=True)
        cov.diag[c] = lambda_discount * cov.diag[c] + (1.0 - lambda_discount) * var
    return cov
