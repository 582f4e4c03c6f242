"""Class-wise covariance tracking and feature perturbation.

A stream of codes whose per-dimension variance differs by class is fed to the
moving average. Each row settles on its own class's variance, and the
perturbation drawn from it is wider for the noisier class.
"""

import torch

from airfi.feat_augment import (ClasswiseCovariance, FeatAugConfig, augment_features_split,
                                update_class_covariance)

gen = torch.Generator().manual_seed(0)
true_std = torch.tensor([[0.5, 0.5, 0.5], [2.0, 1.0, 0.25]])  # class 0, class 1
cov = ClasswiseCovariance(2, 3)

for step in range(1, 201):
    labels = torch.arange(64) % 2
    codes = torch.randn(64, 3, generator=gen) * true_std[labels]
    update_class_covariance(cov, codes, labels, 0.9)
    if step in (1, 10, 50, 200):
        print(f"update {step:3d}: class0 {cov.diag[0].numpy().round(3)}  class1 {cov.diag[1].numpy().round(3)}")
print(f"true variances: class0 {true_std[0].pow(2).numpy()}  class1 {true_std[1].pow(2).numpy()}")

z = torch.zeros(2000, 3)
labels = torch.arange(2000) % 2
z_aug, scaled = augment_features_split(z, labels, FeatAugConfig(), cov, gen)
noise = z_aug - scaled
for c in (0, 1):
    print(f"class {c}: perturbation std {noise[labels == c].std(dim=0).numpy().round(3)}")
