"""Classifier head, joint training over source environments, few-shot adaptation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
from torch import nn

from . import dg_align
from .adv_autoencoder import (LEAKY_SLOPE, Decoder, Discriminator, Encoder, adversarial_loss,
                              generator_loss, reconstruction_loss, sample_prior)
from .config import AirFiConfig, ClassifierSpec, FewShotConfig
from .csi_core import Dataset, NormStats, compute_norm_stats
from .data_augment import gaussian_copies, resolve_noise_std
from .feat_augment import ClasswiseCovariance, augment_features_split, update_class_covariance

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-9
EVAL_CHUNK = 64
LOSS_COLUMNS = ("step", "L_ce", "L_re", "L_ad", "L_MMD", "total")


class Classifier(nn.Module):
    """Three fully connected layers ending in a softmax."""

    def __init__(self, latent_dim: int, num_classes: int, spec: ClassifierSpec = ClassifierSpec()):
        super().__init__()
        layers: list[nn.Module] = []
        width = latent_dim
        for w in spec.hidden_widths:
            layers += [nn.Linear(width, w), nn.LeakyReLU(LEAKY_SLOPE)]
            width = w
        layers.append(nn.Linear(width, num_classes))
        self.net = nn.Sequential(*layers)
        self.latent_dim = latent_dim

    def logits(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"expected codes of dim {self.latent_dim}, got {z.shape[-1]}")
        return self.net(z)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(z), dim=-1)


def cross_entropy(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Batch mean of ``-log p(y_i | z_i)`` with probabilities clamped at 1e-9."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.numel() and (labels.min() < 0 or labels.max() >= probs.shape[-1]):
        raise ValueError(f"labels must lie in [0, {probs.shape[-1]})")
    picked = probs.gather(-1, labels[:, None]).squeeze(-1)
    return -torch.log(picked.clamp_min(PROB_CLAMP)).mean()


class AirFiNet(nn.Module):
    """Encoder Q, decoder P, discriminator D and classifier F."""

    def __init__(self, config: AirFiConfig, num_classes: int):
        super().__init__()
        m = config.model
        self.encoder = Encoder(m.encoder)
        self.decoder = Decoder(m.encoder)
        self.discriminator = Discriminator(m.encoder.latent_dim, m.discriminator)
        self.classifier = Classifier(m.encoder.latent_dim, num_classes, m.classifier)

    def autoencoder_parameters(self):
        for mod in (self.encoder, self.decoder, self.classifier):
            yield from mod.parameters()


@dataclass
class TrainedModel:
    net: AirFiNet
    cov: ClasswiseCovariance
    norm: NormStats
    config: AirFiConfig
    num_classes: int
    source_envs: tuple[int, ...]
    gamma: float = 1.0
    reservoir: np.ndarray | None = None
    history: list["LossReport"] = field(default_factory=list)

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    def _dtype(self) -> torch.dtype:
        return next(self.net.parameters()).dtype

    def prepare(self, amplitudes: np.ndarray) -> torch.Tensor:
        """Normalize raw amplitudes with the training statistics."""
        return torch.from_numpy(self.norm.apply(amplitudes)).to(self._dtype())

    @torch.no_grad()
    def encode(self, amplitudes: np.ndarray) -> np.ndarray:
        amplitudes = np.asarray(amplitudes)
        single = amplitudes.ndim == 3
        if single:
            amplitudes = amplitudes[None]
        out = [self.net.encoder(self.prepare(amplitudes[i:i + EVAL_CHUNK])).numpy()
               for i in range(0, len(amplitudes), EVAL_CHUNK)]
        z = np.concatenate(out) if out else np.zeros((0, self.config.model.encoder.latent_dim))
        return z[0] if single else z

    @torch.no_grad()
    def predict_proba(self, amplitudes: np.ndarray) -> np.ndarray:
        z = self.encode(np.asarray(amplitudes).reshape((-1,) + np.asarray(amplitudes).shape[-3:]))
        if len(z) == 0:
            return np.zeros((0, self.num_classes))
        return self.net.classifier(torch.from_numpy(z)).numpy()

    def predict(self, amplitudes: np.ndarray) -> np.ndarray:
        return self.predict_proba(amplitudes).argmax(axis=-1)


def classify(z, classifier: Classifier) -> torch.Tensor:
    z = torch.as_tensor(z)
    return classifier(z.to(next(classifier.parameters()).dtype))


@dataclass(frozen=True)
class DomainBatch:
    env_id: int
    x: torch.Tensor  # normalized amplitudes [m, 114, 3, 500]
    y: torch.Tensor  # labels [m]


@dataclass(frozen=True)
class LossReport:
    step: int
    L_ce: float
    L_re: float
    L_ad: float
    L_MMD: float
    total: float
    gamma: float

    def row(self) -> list:
        return [self.step, self.L_ce, self.L_re, self.L_ad, self.L_MMD, self.total]


def write_loss_csv(history: Sequence[LossReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_COLUMNS)
        for rep in history:
            writer.writerow(rep.row())


def _maybe_grad(enabled: bool):
    return torch.enable_grad() if enabled else torch.no_grad()


def joint_objective(net: AirFiNet, batches: Sequence[DomainBatch], z: torch.Tensor, config: AirFiConfig,
                    cov: ClasswiseCovariance, gamma: float, generator: torch.Generator):
    """Weighted objective for the encoder/decoder/classifier step.

    Returns ``(total, terms, z_scaled)``: ``z_scaled`` is the augmented code
    before the class regularizer (what the covariance average tracks) and
    ``terms`` holds the reported (unweighted) values. Terms with zero weight are evaluated without a graph.
    ``gamma=None`` takes the median-heuristic bandwidth of the augmented codes.
    """
    w = config.train.weights
    y = torch.cat([b.y for b in batches])
    sizes = [len(b.y) for b in batches]

    z_aug, z_scaled = augment_features_split(z, y, config.feat_aug, cov, generator)
    if gamma is None:
        gamma = dg_align.median_heuristic_gamma(z_aug.detach())

    l_ce = cross_entropy(net.classifier(z_aug), y)

    with _maybe_grad(w.w_mmd > 0):
        domains = torch.split(z_aug, sizes)
        l_mmd_sq = dg_align.mmd_loss(domains, gamma, squared=True)
    with torch.no_grad():
        l_mmd = dg_align.mmd_loss([d.detach() for d in domains], gamma)

    with _maybe_grad(w.w_re > 0):
        x_hat = net.decoder(z)
        l_re = reconstruction_loss(torch.split(x_hat, sizes), [b.x for b in batches])

    with _maybe_grad(w.w_ad > 0):
        l_gen = generator_loss(net.discriminator(z))

    total = w.w_ce * l_ce
    for weight, term in ((w.w_mmd, l_mmd_sq), (w.w_re, l_re), (w.w_ad, l_gen)):
        if weight > 0:
            total = total + weight * term
    terms = {"L_ce": l_ce.item(), "L_re": l_re.item(), "L_MMD": l_mmd.item(), "gamma": gamma}
    return total, terms, z_scaled


class Trainer:
    """Owns the mutable training state: parameters, optimizers, class covariances."""

    def __init__(self, config: AirFiConfig, num_classes: int, seed: int | None = None,
                 dtype: torch.dtype = torch.float32):
        self.config = config
        self.num_classes = num_classes
        seed = config.train.seed if seed is None else seed
        torch.manual_seed(seed)
        self.net = AirFiNet(config, num_classes).to(dtype)
        self.generator = torch.Generator().manual_seed(seed + 1)
        latent = config.model.encoder.latent_dim
        self.cov = ClasswiseCovariance(num_classes, latent, dtype=dtype)
        self.gamma = config.dg.gamma if config.dg.gamma is not None else 1.0
        self.step_count = 0
        lr = config.train.lr
        self.opt_main = torch.optim.Adam(list(self.net.autoencoder_parameters()), lr=lr)
        self.opt_disc = torch.optim.Adam(self.net.discriminator.parameters(), lr=lr)

    def _discriminator_step(self, z: torch.Tensor) -> float:
        cfg = self.config
        d = self.net.discriminator
        latent = cfg.model.encoder.latent_dim
        z = z.detach()
        if cfg.train.weights.w_ad <= 0:
            with torch.no_grad():
                h = sample_prior(len(z), latent, cfg.model.prior, self.generator, z.dtype)
                return float(adversarial_loss(d(h), d(z)))
        for _ in range(cfg.train.d_steps):
            h = sample_prior(len(z), latent, cfg.model.prior, self.generator, z.dtype)
            l_ad = adversarial_loss(d(h), d(z))
            self.opt_disc.zero_grad()
            (-l_ad).backward()
            self.opt_disc.step()
        with torch.no_grad():
            return float(adversarial_loss(d(h), d(z)))

    def step(self, batches: Sequence[DomainBatch]) -> LossReport:
        if len(batches) < 1:
            raise ValueError("need at least one environment batch")
        cfg = self.config
        net = self.net
        x = torch.cat([b.x for b in batches])
        y = torch.cat([b.y for b in batches])

        # (1) encode, (2) discriminator ascent on the adversarial loss
        z = net.encoder(x)
        l_ad = self._discriminator_step(z)

        for g in range(max(cfg.train.g_steps, 1)):
            if g > 0:
                z = net.encoder(x)
            refresh = (cfg.dg.gamma is None and g == 0
                       and self.step_count % max(cfg.dg.recompute_gamma_every, 1) == 0)
            # (3) feature augmentation then covariance update, (4) joint descent
            total, terms, z_scaled = joint_objective(net, batches, z, cfg, self.cov,
                                                  None if refresh else self.gamma, self.generator)
            self.gamma = terms["gamma"]
            if cfg.feat_aug.enabled:
                update_class_covariance(self.cov, z_scaled, y, cfg.feat_aug.lambda_discount)
            self.opt_main.zero_grad()
            total.backward()
            self.opt_main.step()

        report = LossReport(self.step_count, terms["L_ce"], terms["L_re"], l_ad, terms["L_MMD"],
                            total.item(), self.gamma)
        self.step_count += 1
        return report


def train_step(trainer: Trainer, domain_batches: Sequence[DomainBatch]) -> LossReport:
    return trainer.step(domain_batches)


class EnvSampler:
    """Per-environment balanced batches, reshuffled after each pass over the pool."""

    def __init__(self, env_id: int, pools: Sequence[Dataset], norm: NormStats, rng: np.random.Generator):
        self.env_id = env_id
        self.pools = list(pools)
        self.offsets = np.cumsum([0] + [len(p) for p in self.pools])
        self.norm = norm
        self.rng = rng
        self.order = np.empty(0, dtype=np.int64)
        self.pos = 0

    def __len__(self) -> int:
        return int(self.offsets[-1])

    def _take(self, flat_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        amps = np.empty((len(flat_idx),) + self.pools[0].amplitudes.shape[1:], dtype=np.float32)
        labels = np.empty(len(flat_idx), dtype=np.int64)
        for row, i in enumerate(flat_idx):
            p = int(np.searchsorted(self.offsets, i, side="right") - 1)
            j = int(i - self.offsets[p])
            amps[row] = self.pools[p].amplitudes[j]
            labels[row] = self.pools[p].labels[j]
        return amps, labels

    def next_batch(self, size: int, dtype=torch.float32) -> DomainBatch:
        idx = []
        while len(idx) < size:
            if self.pos >= len(self.order):
                self.order = self.rng.permutation(len(self))
                self.pos = 0
            take = min(size - len(idx), len(self.order) - self.pos)
            idx.extend(self.order[self.pos:self.pos + take])
            self.pos += take
        amps, labels = self._take(np.asarray(idx))
        x = torch.from_numpy(self.norm.apply(amps)).to(dtype)
        return DomainBatch(self.env_id, x, torch.from_numpy(labels))


def _as_env_map(sources) -> dict[int, Dataset]:
    if isinstance(sources, Mapping):
        return {int(k): v for k, v in sorted(sources.items())}
    out = {}
    for ds in sources:
        envs = sorted(ds.env_ids)
        if len(envs) != 1:
            raise ValueError("each source dataset must hold exactly one environment")
        out[envs[0]] = ds
    return dict(sorted(out.items()))


def _draw_reservoir(sources: Mapping[int, Dataset], size: int, seed: int) -> np.ndarray:
    """Seeded uniform draw of raw source samples pooled across environments."""
    total = sum(len(d) for d in sources.values())
    size = min(size, total)
    picks = np.sort(np.random.default_rng([seed, 7]).choice(total, size=size, replace=False))
    out = np.empty((size,) + next(iter(sources.values())).amplitudes.shape[1:], dtype=np.float32)
    offsets = np.cumsum([0] + [len(d) for d in sources.values()])
    datasets = list(sources.values())
    for row, i in enumerate(picks):
        p = int(np.searchsorted(offsets, i, side="right") - 1)
        out[row] = datasets[p].amplitudes[i - offsets[p]]
    return out


def train(sources: Mapping[int, Dataset] | Sequence[Dataset], config: AirFiConfig = AirFiConfig(),
          progress: Callable[[LossReport], None] | None = None, keep_reservoir: bool = True) -> TrainedModel:
    """Train on source environments only.

    ``sources`` maps environment id to that environment's dataset. The target
    environment is deliberately not a parameter.
    """
    envs = _as_env_map(sources)
    if len(envs) < 2:
        raise ValueError(f"training needs at least 2 source environments (MMD is over pairs), got {len(envs)}")
    num_classes = {d.num_classes for d in envs.values()}
    if len(num_classes) != 1:
        raise ValueError(f"source datasets disagree on num_classes: {num_classes}")
    num_classes = num_classes.pop()
    seed = config.train.seed

    norm = compute_norm_stats(list(envs.values()))
    trainer = Trainer(config, num_classes, seed)

    aug_cfg = config.data_aug
    augmenting = aug_cfg.enabled and aug_cfg.copies_per_sample > 0
    if augmenting:
        # one noise level for every environment, from the pooled source amplitudes
        aug_cfg = replace(aug_cfg, noise_std=resolve_noise_std(list(envs.values()), aug_cfg))

    samplers = []
    for env_id, ds in envs.items():
        pools = [ds]
        if augmenting:
            pools.append(gaussian_copies(ds, replace(aug_cfg, seed=seed * 1000 + env_id)))
        samplers.append(EnvSampler(env_id, pools, norm, np.random.default_rng([seed, 11, env_id])))

    history: list[LossReport] = []
    for _ in range(config.train.steps):
        batches = [s.next_batch(config.train.batch_per_env) for s in samplers]
        rep = trainer.step(batches)
        history.append(rep)
        if progress is not None:
            progress(rep)
        if rep.step % 50 == 0:
            log.info("step %d  ce=%.4f re=%.1f ad=%.4f mmd=%.4f", rep.step, rep.L_ce, rep.L_re, rep.L_ad, rep.L_MMD)
    del samplers

    reservoir = _draw_reservoir(envs, config.fewshot.reservoir_size, seed) if keep_reservoir else None
    return TrainedModel(trainer.net.eval(), trainer.cov, norm, config, num_classes, tuple(envs),
                        trainer.gamma, reservoir, history)


# -- few-shot -------------------------------------------------------------------


def select_fewshot_samples(target: Dataset, k: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Pick ``k`` labeled samples round-robin over classes; returns ``(picked, rest)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng([seed, 13])
    by_class = {c: list(rng.permutation(np.flatnonzero(target.labels == c)))
                for c in range(target.num_classes)}
    picked = []
    while len(picked) < k and any(by_class.values()):
        for c in range(target.num_classes):
            if by_class[c] and len(picked) < k:
                picked.append(by_class[c].pop())
    picked = np.sort(np.asarray(picked, dtype=np.int64))
    rest = np.setdiff1d(np.arange(len(target)), picked)
    return target.subset(picked), target.subset(rest)


def fewshot_objective(model: TrainedModel, source_codes: torch.Tensor, target_x: torch.Tensor,
                      target_y: torch.Tensor) -> tuple[torch.Tensor, float, float]:
    """``MMD(source codes, target codes) + CE(target)``; returns (L_f, mmd, ce)."""
    z_t = model.net.encoder(target_x)
    l_mmd = dg_align.mmd(source_codes, z_t, model.gamma)
    l_ce = cross_entropy(model.net.classifier(z_t), target_y)
    return l_mmd + l_ce, l_mmd.item(), l_ce.item()


def _clone_model(model: TrainedModel) -> TrainedModel:
    net = AirFiNet(model.config, model.num_classes).to(model._dtype())
    net.load_state_dict(model.net.state_dict())
    return TrainedModel(net.eval(), model.cov.clone(), model.norm, model.config, model.num_classes,
                        model.source_envs, model.gamma, model.reservoir, list(model.history))


def fewshot_adapt(model: TrainedModel, target: Dataset, config: FewShotConfig | None = None,
                  seed: int = 0) -> TrainedModel:
    """Fine-tune encoder and classifier on a few labeled target samples.

    Source codes come from the model's cached reservoir, re-encoded with the
    current encoder at every step and held fixed within the step. Decoder and
    discriminator are frozen. Returns a new model; the input is not modified.
    """
    config = config or model.config.fewshot
    if len(target) == 0:
        raise ValueError("few-shot adaptation needs at least one target sample")
    if set(target.env_ids) & set(model.source_envs):
        raise ValueError("few-shot target samples must come from an environment unseen in training")
    if model.reservoir is None or len(model.reservoir) == 0:
        raise ValueError("model carries no source reservoir")
    adapted = _clone_model(model)
    if config.adapt_steps == 0:
        return adapted
    torch.manual_seed(seed)
    net = adapted.net
    params = list(net.encoder.parameters()) + list(net.classifier.parameters())
    opt = torch.optim.Adam(params, lr=config.lr)
    x_t = adapted.prepare(target.amplitudes)
    y_t = torch.as_tensor(np.array(target.labels, dtype=np.int64))
    res = adapted.reservoir
    for step in range(config.adapt_steps):
        with torch.no_grad():
            z_s = torch.cat([net.encoder(adapted.prepare(res[i:i + EVAL_CHUNK]))
                             for i in range(0, len(res), EVAL_CHUNK)])
        loss, l_mmd, l_ce = fewshot_objective(adapted, z_s, x_t, y_t)
        opt.zero_grad()
        loss.backward()
        opt.step()
        log.debug("fewshot step %d  mmd=%.4f ce=%.4f", step, l_mmd, l_ce)
    net.eval()
    return adapted
