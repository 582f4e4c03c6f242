"""RBF kernel mean embeddings and multi-domain MMD alignment.

All quantities use the biased (V-statistic) estimator, so squared MMD is a
squared RKHS norm and never negative up to round-off. Inputs may be numpy
arrays or torch tensors; results are torch scalars so they can be
differentiated during training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

MEDIAN_SUBSAMPLE = 1000


@dataclass(frozen=True)
class KernelSpec:
    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


@dataclass
class DomainFeatureSet:
    codes: torch.Tensor
    env_id: int = -1

    def __post_init__(self):
        self.codes = _as_matrix(self.codes)
        if self.codes.shape[0] < 1:
            raise ValueError("a domain needs at least one code")


def _as_matrix(x) -> torch.Tensor:
    if isinstance(x, DomainFeatureSet):
        return x.codes
    t = x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x, dtype=np.float64))
    if t.ndim == 1:
        t = t[None, :]
    if t.ndim != 2:
        raise ValueError(f"codes must be a matrix, got shape {tuple(t.shape)}")
    return t


def _gamma(kernel) -> float:
    return kernel.gamma if isinstance(kernel, KernelSpec) else float(kernel)


def rbf_kernel(a, b, gamma: float) -> torch.Tensor:
    a = torch.as_tensor(a, dtype=torch.float64) if not isinstance(a, torch.Tensor) else a
    b = torch.as_tensor(b, dtype=torch.float64) if not isinstance(b, torch.Tensor) else b
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.exp(-gamma * ((a - b) ** 2).sum())


def kernel_matrix(x, y, gamma: float) -> torch.Tensor:
    x, y = _as_matrix(x), _as_matrix(y)
    if x.shape[1] != y.shape[1]:
        raise ValueError("code dimensions differ")
    sq = ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)
    return torch.exp(-gamma * sq)


def mmd_squared(zi, zj, kernel) -> torch.Tensor:
    """Biased estimate of the squared embedding distance (may dip below 0 by round-off)."""
    zi, zj = _as_matrix(zi), _as_matrix(zj)
    if zi.shape[0] == 0 or zj.shape[0] == 0:
        raise ValueError("MMD needs non-empty sets")
    g = _gamma(kernel)
    return kernel_matrix(zi, zi, g).mean() + kernel_matrix(zj, zj, g).mean() - 2 * kernel_matrix(zi, zj, g).mean()


def _safe_sqrt(v: torch.Tensor) -> torch.Tensor:
    # zero value and zero gradient where v <= 0
    pos = v > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, v, torch.ones_like(v))), torch.zeros_like(v))


def mmd(zi, zj, kernel) -> torch.Tensor:
    return _safe_sqrt(mmd_squared(zi, zj, kernel))


def mmd_loss(domains: Sequence, kernel, squared: bool = False) -> torch.Tensor:
    """Average over all ordered domain pairs ``(i, j)`` of the pairwise MMD.

    Diagonal pairs contribute zero and every unordered pair is counted twice,
    divided by ``N**2``. ``squared=True`` averages squared MMD instead, which is
    smooth at zero and is what training minimizes.
    """
    mats = [_as_matrix(d) for d in domains]
    n = len(mats)
    if n < 1:
        raise ValueError("need at least one domain")
    g = _gamma(kernel)
    # one kernel matrix for the pooled codes, then block means
    pooled = torch.cat(mats)
    sizes = [m.shape[0] for m in mats]
    k = kernel_matrix(pooled, pooled, g)
    bounds = np.cumsum([0] + sizes)
    means = torch.stack([
        torch.stack([k[bounds[i]:bounds[i + 1], bounds[j]:bounds[j + 1]].mean() for j in range(n)])
        for i in range(n)
    ])
    diag = torch.diagonal(means)
    v = diag[:, None] + diag[None, :] - 2 * means
    v = v - torch.diag(torch.diagonal(v))
    terms = v if squared else _safe_sqrt(v)
    return terms.sum() / n ** 2


def domain_variance_bound_check(domains: Sequence, kernel) -> tuple[float, float]:
    """``(mean_i ||mu_i - mean_j mu_j||, (1/N^2) sum_ij MMD(Z_i, Z_j))``.

    The left side is expanded through kernel inner products of the empirical
    mean embeddings; it never exceeds the right side.
    """
    mats = [_as_matrix(d).to(torch.float64) for d in domains]
    n = len(mats)
    if n < 2:
        raise ValueError("need at least two domains")
    g = _gamma(kernel)
    gram = torch.empty(n, n, dtype=torch.float64)
    for i in range(n):
        for j in range(i, n):
            gram[i, j] = gram[j, i] = kernel_matrix(mats[i], mats[j], g).mean()
    lhs = 0.0
    for i in range(n):
        sq = gram[i, i] - 2 * gram[i].mean() + gram.mean()
        lhs += float(_safe_sqrt(sq))
    lhs /= n
    rhs = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                rhs += float(_safe_sqrt(gram[i, i] + gram[j, j] - 2 * gram[i, j]))
    return lhs, rhs / n ** 2


def median_heuristic_gamma(codes, max_rows: int = MEDIAN_SUBSAMPLE, seed: int = 0) -> float:
    """``1 / (2 median^2)`` of pairwise distances; 1.0 if the median is zero."""
    x = _as_matrix(codes).detach().to(torch.float64)
    if x.shape[0] < 2:
        raise ValueError("median heuristic needs at least two rows")
    if x.shape[0] > max_rows:
        idx = np.random.default_rng(seed).choice(x.shape[0], size=max_rows, replace=False)
        x = x[torch.as_tensor(np.sort(idx))]
    d = torch.cdist(x, x, compute_mode="donot_use_mm_for_euclid_dist")
    iu = torch.triu_indices(x.shape[0], x.shape[0], offset=1)
    med = float(np.median(d[iu[0], iu[1]].numpy()))
    if med == 0.0:
        return 1.0
    return 1.0 / (2.0 * med ** 2)
