"""Run configuration and its flat ``section.key`` JSON form."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .adv_autoencoder import DiscriminatorSpec, EncoderSpec, PriorSpec
from .data_augment import DataAugConfig
from .feat_augment import FeatAugConfig


@dataclass(frozen=True)
class LossWeights:
    w_ad: float = 0.1
    w_re: float = 1e-5
    w_mmd: float = 30.0
    w_ce: float = 1.0

    def __post_init__(self):
        if min(self.w_ad, self.w_re, self.w_mmd, self.w_ce) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    weights: LossWeights = LossWeights()
    steps: int = 80
    batch_per_env: int = 32
    lr: float = 1e-3
    seed: int = 0
    d_steps: int = 1
    g_steps: int = 1

    def __post_init__(self):
        if self.batch_per_env < 2:
            raise ValueError("batch_per_env must be >= 2 (class covariances need two codes)")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclass(frozen=True)
class DgConfig:
    gamma: float | None = None  # None -> median heuristic
    recompute_gamma_every: int = 50


@dataclass(frozen=True)
class ClassifierSpec:
    hidden_widths: tuple[int, ...] = (64, 32)


@dataclass(frozen=True)
class FewShotConfig:
    k_target_samples: int = 10
    adapt_steps: int = 30
    lr: float = 1e-4
    reservoir_size: int = 512

    def __post_init__(self):
        if self.k_target_samples < 1:
            raise ValueError("k_target_samples must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderSpec = EncoderSpec()
    prior: PriorSpec = PriorSpec()
    discriminator: DiscriminatorSpec = DiscriminatorSpec()
    classifier: ClassifierSpec = ClassifierSpec()


@dataclass(frozen=True)
class AirFiConfig:
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    data_aug: DataAugConfig = DataAugConfig()
    feat_aug: FeatAugConfig = FeatAugConfig()
    dg: DgConfig = DgConfig()
    fewshot: FewShotConfig = FewShotConfig()

    # -- flat form ------------------------------------------------------------

    def to_flat(self) -> dict[str, Any]:
        m, t, w = self.model, self.train, self.train.weights
        return {
            "model.latent_dim": m.encoder.latent_dim,
            "model.encoder_stages": [list(s) for s in m.encoder.conv_stages],
            "model.prior": {"family": m.prior.family, "scale": m.prior.scale},
            "model.discriminator_widths": list(m.discriminator.hidden_widths),
            "model.classifier_widths": list(m.classifier.hidden_widths),
            "train.steps": t.steps,
            "train.batch_per_env": t.batch_per_env,
            "train.lr": t.lr,
            "train.seed": t.seed,
            "train.d_steps": t.d_steps,
            "train.g_steps": t.g_steps,
            "train.w_ad": w.w_ad,
            "train.w_re": w.w_re,
            "train.w_mmd": w.w_mmd,
            "train.w_ce": w.w_ce,
            "data_aug.enabled": self.data_aug.enabled,
            "data_aug.noise_std": self.data_aug.noise_std,
            "data_aug.copies": self.data_aug.copies_per_sample,
            "feat_aug.enabled": self.feat_aug.enabled,
            "feat_aug.sigma": self.feat_aug.sigma,
            "feat_aug.lambda": self.feat_aug.lambda_discount,
            "dg.gamma": self.dg.gamma,
            "dg.recompute_gamma_every": self.dg.recompute_gamma_every,
            "fewshot.k": self.fewshot.k_target_samples,
            "fewshot.adapt_steps": self.fewshot.adapt_steps,
            "fewshot.lr": self.fewshot.lr,
            "fewshot.reservoir_size": self.fewshot.reservoir_size,
        }

    @classmethod
    def from_flat(cls, flat: Mapping[str, Any], base: "AirFiConfig | None" = None) -> "AirFiConfig":
        """Overlay ``flat`` keys on ``base`` (defaults when omitted)."""
        merged = (base or cls()).to_flat()
        unknown = set(flat) - set(merged)
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        merged.update(flat)
        g = merged.get
        prior = g("model.prior")
        if isinstance(prior, str):
            prior = {"family": prior, "scale": 1.0}
        encoder = EncoderSpec(
            conv_stages=tuple(tuple(s) for s in g("model.encoder_stages")),
            latent_dim=int(g("model.latent_dim")),
        )
        model = ModelConfig(
            encoder=encoder,
            prior=PriorSpec(family=prior["family"], scale=float(prior.get("scale", 1.0))),
            discriminator=DiscriminatorSpec(tuple(g("model.discriminator_widths"))),
            classifier=ClassifierSpec(tuple(g("model.classifier_widths"))),
        )
        train = TrainConfig(
            weights=LossWeights(float(g("train.w_ad")), float(g("train.w_re")),
                                float(g("train.w_mmd")), float(g("train.w_ce"))),
            steps=int(g("train.steps")),
            batch_per_env=int(g("train.batch_per_env")),
            lr=float(g("train.lr")),
            seed=int(g("train.seed")),
            d_steps=int(g("train.d_steps")),
            g_steps=int(g("train.g_steps")),
        )
        noise = g("data_aug.noise_std")
        gamma = g("dg.gamma")
        return cls(
            model=model,
            train=train,
            data_aug=DataAugConfig(noise_std=None if noise is None else float(noise),
                                   copies_per_sample=int(g("data_aug.copies")),
                                   enabled=bool(g("data_aug.enabled"))),
            feat_aug=FeatAugConfig(sigma=float(g("feat_aug.sigma")),
                                   lambda_discount=float(g("feat_aug.lambda")),
                                   enabled=bool(g("feat_aug.enabled"))),
            dg=DgConfig(gamma=None if gamma is None else float(gamma),
                        recompute_gamma_every=int(g("dg.recompute_gamma_every"))),
            fewshot=FewShotConfig(k_target_samples=int(g("fewshot.k")),
                                  adapt_steps=int(g("fewshot.adapt_steps")),
                                  lr=float(g("fewshot.lr")),
                                  reservoir_size=int(g("fewshot.reservoir_size"))),
        )

    def with_flat(self, **overrides: Any) -> "AirFiConfig":
        """``cfg.with_flat(**{"train.steps": 10})`` style override."""
        return AirFiConfig.from_flat(overrides, base=self)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_flat(), sort_keys=True).encode()).hexdigest()[:16]


def load_config(path: str | Path | None) -> AirFiConfig:
    if path is None:
        return AirFiConfig()
    return AirFiConfig.from_flat(json.loads(Path(path).read_text()))


# The four arms of the ablation study differ only in these flat keys.
ABLATION_ARMS: dict[str, dict[str, Any]] = {
    "full": {},
    "no_data_aug": {"data_aug.enabled": False},
    "no_feat_aug": {"feat_aug.enabled": False},
    "ce_only": {
        "data_aug.enabled": False,
        "feat_aug.enabled": False,
        "train.w_ad": 0.0,
        "train.w_re": 0.0,
        "train.w_mmd": 0.0,
    },
}


def arm_config(base: AirFiConfig, arm: str) -> AirFiConfig:
    return base.with_flat(**ABLATION_ARMS[arm])
