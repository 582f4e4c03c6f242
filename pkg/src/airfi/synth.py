"""Seeded synthetic multi-environment CSI gesture data.

Each gesture class has a fixed spatio-temporal template (three windowed
sinusoidal bursts). An environment distorts the template with a band-limited
subcarrier mixing matrix, a gain, a per-subcarrier offset and additive noise,
loosely imitating how multipath changes the received amplitude profile.

Gestures are also performed at room-specific spots, so every (environment,
class) pair carries its own static subcarrier profile. Within the source
rooms that profile predicts the class; in a new room it is unrelated to it,
which is the shortcut a model that ignores environment shift falls for.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .csi_core import NUM_ANTENNAS, NUM_PACKETS, NUM_SUBCARRIERS, SAMPLE_SHAPE, Dataset

MIXING_BANDWIDTH = 5
BURSTS_PER_CLASS = 3
GAIN_RANGE = (0.5, 2.0)
# Offsets combine two smooth subcarrier profiles shared by all environments.
# Environment weights sit on a jittered circle, so no environment lies inside
# the hull of the others and a held-out one is always an extrapolation.
OFFSET_RANK = 2

# Stream tags keep the seeded sub-generators independent of each other.
_GRID_STREAM = 0
_CLASS_STREAM = 1
_ENV_STREAM = 2
_SAMPLE_STREAM = 3
_BASIS_STREAM = 4
_LOCATION_STREAM = 5
_JITTER_STREAM = 6


@dataclass(frozen=True)
class EnvParams:
    env_id: int
    mixing: np.ndarray
    gain: float
    offset: np.ndarray
    noise_std: float

    def __post_init__(self):
        mixing = np.asarray(self.mixing, dtype=np.float64)
        offset = np.asarray(self.offset, dtype=np.float64)
        if mixing.shape != (NUM_SUBCARRIERS, NUM_SUBCARRIERS):
            raise ValueError(f"mixing must be 114x114, got {mixing.shape}")
        if offset.shape != (NUM_SUBCARRIERS,):
            raise ValueError(f"offset must have 114 entries, got {offset.shape}")
        i, j = np.indices(mixing.shape)
        if np.any(mixing[np.abs(i - j) > MIXING_BANDWIDTH] != 0):
            raise ValueError("mixing has entries outside the allowed band")
        if not GAIN_RANGE[0] <= self.gain <= GAIN_RANGE[1]:
            raise ValueError(f"gain {self.gain} outside {GAIN_RANGE}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        object.__setattr__(self, "mixing", mixing)
        object.__setattr__(self, "offset", offset)

    @classmethod
    def identity(cls, env_id: int = 0, noise_std: float = 0.0) -> "EnvParams":
        return cls(env_id, np.eye(NUM_SUBCARRIERS), 1.0, np.zeros(NUM_SUBCARRIERS), noise_std)


@dataclass(frozen=True)
class GenConfig:
    num_envs: int = 4
    num_classes: int = 8
    samples_per_class_per_env: int = 50
    seed: int = 42
    env_noise_std: float = 0.1
    offset_scale: float = 1.0
    mixing_scale: float = 0.3
    base_level: float = 2.0
    location_scale: float = 6.0
    # per-repetition variation: envelope shift (packets), relative amplitude
    # spread, and phase spread (radians) of the location profile
    time_jitter: float = 0.0
    amplitude_jitter: float = 0.0
    location_jitter: float = 0.0

    def __post_init__(self):
        if self.num_envs < 2:
            raise ValueError("need at least two environments")
        if self.num_classes < 1 or self.samples_per_class_per_env < 1:
            raise ValueError("class and sample counts must be positive")
        if self.env_noise_std < 0:
            raise ValueError("env_noise_std must be non-negative")
        if self.location_scale < 0:
            raise ValueError("location_scale must be non-negative")
        if min(self.time_jitter, self.amplitude_jitter, self.location_jitter) < 0:
            raise ValueError("jitter settings must be non-negative")
        if self.amplitude_jitter >= 1:
            raise ValueError("amplitude_jitter must be below 1")

    @property
    def jittered(self) -> bool:
        return bool(self.time_jitter or self.amplitude_jitter or self.location_jitter)


def _frequency_grid(num_classes: int, seed: int) -> np.ndarray:
    """Disjoint per-class burst frequencies (cycles per window), shape [C, 3]."""
    rng = np.random.default_rng([seed, _GRID_STREAM])
    slots = 3.0 + 1.5 * np.arange(num_classes * BURSTS_PER_CLASS)
    return rng.permutation(slots).reshape(num_classes, BURSTS_PER_CLASS)


def _center_grid(num_classes: int, seed: int) -> np.ndarray:
    """Disjoint per-class envelope centres in packets, shape [C]."""
    rng = np.random.default_rng([seed, _GRID_STREAM, 1])
    centers = np.linspace(0.25, 0.75, num_classes) * NUM_PACKETS
    return rng.permutation(centers)


def class_template(class_id: int, seed: int, num_classes: int = 8, shift: float = 0.0) -> np.ndarray:
    """Noise-free gesture template ``[114, 3, 500]`` for one class, delayed by ``shift`` packets."""
    if not 0 <= class_id < num_classes:
        raise ValueError(f"class_id {class_id} outside [0, {num_classes})")
    freqs = _frequency_grid(num_classes, seed)[class_id]
    center = _center_grid(num_classes, seed)[class_id]
    rng = np.random.default_rng([seed, _CLASS_STREAM, class_id])

    s = np.arange(NUM_SUBCARRIERS)[:, None, None]
    t = np.arange(NUM_PACKETS)[None, None, :] - shift
    width = NUM_PACKETS / 8
    envelope = np.exp(-0.5 * ((t - center) / width) ** 2)
    out = np.zeros(SAMPLE_SHAPE)
    for k in range(BURSTS_PER_CLASS):
        level = rng.uniform(0.5, 1.0)
        ripple = rng.integers(1, 4)
        psi = rng.uniform(0, 2 * np.pi)
        profile = level * (1.0 + 0.5 * np.cos(2 * np.pi * ripple * s / NUM_SUBCARRIERS + psi))
        phases = rng.uniform(0, 2 * np.pi, size=NUM_ANTENNAS)[None, :, None]
        out += profile * np.sin(2 * np.pi * freqs[k] * t / NUM_PACKETS + phases)
    return out * envelope


def apply_environment(base: np.ndarray, env: EnvParams, rng: np.random.Generator | None = None) -> np.ndarray:
    """``gain * (mixing @ base[:, a, t]) + offset + noise`` for every antenna/packet."""
    base = np.asarray(base, dtype=np.float64)
    if base.shape[0] != NUM_SUBCARRIERS:
        raise ValueError(f"base must have 114 subcarriers, got shape {base.shape}")
    out = env.gain * np.einsum("ij,j...->i...", env.mixing, base)
    out += env.offset.reshape((NUM_SUBCARRIERS,) + (1,) * (base.ndim - 1))
    if env.noise_std > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_std > 0")
        out += rng.normal(0.0, env.noise_std, size=out.shape)
    return out


def _offset_basis(seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, _BASIS_STREAM])
    s = np.arange(NUM_SUBCARRIERS) / NUM_SUBCARRIERS
    rows = []
    for r in range(OFFSET_RANK):
        phase = rng.uniform(0, 2 * np.pi)
        rows.append(np.cos(2 * np.pi * (r + 1) * s + phase))
    return np.stack(rows)


def location_profile(env_id: int, class_id: int, config: GenConfig,
                     phase_shift: np.ndarray | float = 0.0) -> np.ndarray:
    """Static ``[114, 3, 1]`` profile of where gesture ``class_id`` is performed in ``env_id``.

    Each room has its own spots, so the profile is tied to the class inside
    one environment but carries no class information across environments.
    ``phase_shift`` (scalar or per antenna) moves a repetition off the spot.
    """
    rng = np.random.default_rng([config.seed, _LOCATION_STREAM, env_id, class_id])
    s = np.arange(NUM_SUBCARRIERS)[:, None] / NUM_SUBCARRIERS
    freq = rng.integers(1, 4, size=(1, NUM_ANTENNAS))
    phase = rng.uniform(0, 2 * np.pi, size=(1, NUM_ANTENNAS)) + np.reshape(phase_shift, (1, -1))
    return (config.location_scale * np.cos(2 * np.pi * freq * s + phase))[:, :, None]


def make_env_params(env_id: int, config: GenConfig) -> EnvParams:
    """Environment parameters drawn once per ``env_id`` from the config seed."""
    rng = np.random.default_rng([config.seed, _ENV_STREAM, env_id])
    i, j = np.indices((NUM_SUBCARRIERS, NUM_SUBCARRIERS))
    band = (np.abs(i - j) <= MIXING_BANDWIDTH) & (i != j)
    mixing = np.eye(NUM_SUBCARRIERS)
    mixing[band] = rng.normal(0.0, config.mixing_scale / np.sqrt(2 * MIXING_BANDWIDTH), size=band.sum())
    gain = rng.uniform(*GAIN_RANGE)
    theta = 2 * np.pi * (env_id + rng.uniform(-0.25, 0.25)) / config.num_envs
    weights = config.offset_scale * np.array([np.cos(theta), np.sin(theta)])
    offset = config.base_level + weights @ _offset_basis(config.seed)
    return EnvParams(env_id, mixing, float(gain), offset, config.env_noise_std)


def repetition(env_id: int, class_id: int, index: int, config: GenConfig, env: EnvParams) -> np.ndarray:
    """Noise-free repetition ``index`` of a gesture: shifted, rescaled and slightly off its spot."""
    rng = np.random.default_rng([config.seed, _JITTER_STREAM, env_id, class_id, index])
    shift = rng.uniform(-config.time_jitter, config.time_jitter)
    scale = rng.uniform(1 - config.amplitude_jitter, 1 + config.amplitude_jitter)
    phase = rng.normal(0.0, config.location_jitter, size=NUM_ANTENNAS)
    base = scale * class_template(class_id, config.seed, config.num_classes, shift)
    clean = EnvParams(env.env_id, env.mixing, env.gain, env.offset, 0.0)
    return apply_environment(base, clean) + location_profile(env_id, class_id, config, phase)


def generate_dataset(config: GenConfig = GenConfig()) -> Dataset:
    """Balanced dataset ordered by environment, then class, then sample index."""
    n_per = config.samples_per_class_per_env
    total = config.num_envs * config.num_classes * n_per
    amps = np.empty((total,) + SAMPLE_SHAPE, dtype=np.float32)
    labels = np.empty(total, dtype=np.int64)
    envs = np.empty(total, dtype=np.int64)
    templates = [class_template(c, config.seed, config.num_classes) for c in range(config.num_classes)]
    row = 0
    for n in range(config.num_envs):
        env = make_env_params(n, config)
        clean = EnvParams(n, env.mixing, env.gain, env.offset, 0.0)
        for c in range(config.num_classes):
            shaped = apply_environment(templates[c], clean) + location_profile(n, c, config)
            for k in range(n_per):
                if config.jittered:
                    shaped = repetition(n, c, k, config, clean)
                rng = np.random.default_rng([config.seed, _SAMPLE_STREAM, n, c, k])
                amps[row] = shaped + rng.normal(0.0, env.noise_std, size=SAMPLE_SHAPE)
                labels[row] = c
                envs[row] = n
                row += 1
    meta = {
        "generator": "airfi.synth",
        "seed": str(config.seed),
        "num_envs": str(config.num_envs),
        "samples_per_class_per_env": str(n_per),
    }
    return Dataset(amps, labels, envs, config.num_classes, meta)
