"""Label-preserving Gaussian-noise copies of CSI samples."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .csi_core import Dataset, concat_datasets, iter_chunks

# Default noise magnitude relative to the global std of the training amplitudes.
RELATIVE_NOISE = 0.05


@dataclass(frozen=True)
class DataAugConfig:
    noise_std: float | None = None  # None -> RELATIVE_NOISE * global amplitude std
    copies_per_sample: int = 1
    seed: int = 0
    enabled: bool = True

    def __post_init__(self):
        if self.copies_per_sample < 0:
            raise ValueError("copies_per_sample must be >= 0")
        if self.noise_std is not None and self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def resolve_noise_std(datasets: Dataset | Sequence[Dataset], config: DataAugConfig) -> float:
    """Configured noise std, or the relative default from the pooled amplitudes."""
    if config.noise_std is not None:
        return float(config.noise_std)
    total, count = 0.0, 0
    for block in iter_chunks(datasets):
        total += block.sum()
        count += block.size
    if count == 0:
        return 0.0
    mean = total / count
    sq = sum(((block - mean) ** 2).sum() for block in iter_chunks(datasets))
    return RELATIVE_NOISE * float(np.sqrt(sq / count))


def gaussian_copies(dataset: Dataset, config: DataAugConfig) -> Dataset:
    """Only the noisy copies: ``copies_per_sample`` blocks, each in dataset order."""
    copies = config.copies_per_sample if config.enabled else 0
    n = len(dataset)
    std = resolve_noise_std(dataset, config)
    out = np.empty((copies * n,) + dataset.amplitudes.shape[1:], dtype=np.float32)
    for k in range(copies):
        for i in range(n):
            rng = np.random.default_rng([config.seed, k, i])
            noise = rng.standard_normal(dataset.amplitudes.shape[1:], dtype=np.float32)
            np.multiply(noise, np.float32(std), out=noise)
            np.add(dataset.amplitudes[i], noise, out=out[k * n + i])
    return Dataset(out, np.tile(dataset.labels, copies), np.tile(dataset.sample_envs, copies),
                   dataset.num_classes, dataset.manifest_meta)


def augment_gaussian(dataset: Dataset, config: DataAugConfig) -> Dataset:
    """Originals followed by ``copies_per_sample`` noisy copies of every sample.

    Copies keep the label and environment of their original. The noise for copy
    ``k`` of sample ``i`` comes from its own seeded stream, so the output does
    not depend on how the work is chunked.
    """
    if not config.enabled or config.copies_per_sample == 0:
        return dataset
    return concat_datasets([dataset, gaussian_copies(dataset, config)], dataset.num_classes)
