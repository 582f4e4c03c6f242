"""CSI data model, on-disk dataset format, normalization and environment splits.

A dataset lives on disk as a directory holding ``manifest.json`` plus one raw
little-endian float32 file per sample, row-major ``[subcarrier, antenna, packet]``
with no header. In memory the samples are stacked into a single read-only
array so that splits and batches can be taken without per-sample objects.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

NUM_SUBCARRIERS = 114
NUM_ANTENNAS = 3
NUM_PACKETS = 500
RAW_PACKETS = 2000
SAMPLE_SHAPE = (NUM_SUBCARRIERS, NUM_ANTENNAS, NUM_PACKETS)
SAMPLE_BYTES = NUM_SUBCARRIERS * NUM_ANTENNAS * NUM_PACKETS * 4
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
STD_FLOOR = 1e-8


class DatasetError(Exception):
    """Base class for dataset ingestion failures; ``code`` identifies the kind."""

    code = "dataset_error"


class MissingFileError(DatasetError):
    code = "missing_file"


class MalformedManifestError(DatasetError):
    code = "malformed_manifest"


class ShapeMismatchError(DatasetError):
    code = "shape_mismatch"


class NonFiniteError(DatasetError):
    code = "non_finite"


class ChecksumError(DatasetError):
    code = "checksum_mismatch"


@dataclass(frozen=True)
class CsiSample:
    amplitude: np.ndarray
    label: int
    env_id: int


@dataclass(frozen=True)
class SplitPlan:
    source_envs: tuple[int, ...]
    target_env: int

    def __post_init__(self):
        object.__setattr__(self, "source_envs", tuple(int(e) for e in self.source_envs))
        if not self.source_envs:
            raise ValueError("split plan needs at least one source environment")
        if len(set(self.source_envs)) != len(self.source_envs):
            raise ValueError(f"duplicate source environments in {self.source_envs}")
        if self.target_env in self.source_envs:
            raise ValueError(f"target environment {self.target_env} is also a source")

    @classmethod
    def leave_one_out(cls, env_ids: Sequence[int], target_env: int) -> "SplitPlan":
        return cls(tuple(e for e in sorted(env_ids) if e != target_env), target_env)

    @property
    def name(self) -> str:
        """Letter label in the ``ABC-D`` style (environment 0 is ``A``)."""
        return "".join(env_letter(e) for e in self.source_envs) + "-" + env_letter(self.target_env)


def env_letter(env_id: int) -> str:
    return chr(ord("A") + env_id) if 0 <= env_id < 26 else f"E{env_id}"


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class Dataset:
    """Immutable collection of CSI samples.

    ``amplitudes`` has shape ``[n, 114, 3, 500]`` (float32); ``labels`` and
    ``sample_envs`` are per-sample int64 arrays. ``env_ids`` is the set of
    environments present.
    """

    def __init__(
        self,
        amplitudes: np.ndarray,
        labels: Sequence[int] | np.ndarray,
        sample_envs: Sequence[int] | np.ndarray,
        num_classes: int,
        manifest_meta: Mapping[str, str] | None = None,
    ):
        amplitudes = np.asarray(amplitudes, dtype=np.float32)
        if amplitudes.size == 0:
            amplitudes = amplitudes.reshape((0,) + SAMPLE_SHAPE)
        if amplitudes.ndim != 4 or amplitudes.shape[1:] != SAMPLE_SHAPE:
            raise ShapeMismatchError(f"expected [n, 114, 3, 500] amplitudes, got {amplitudes.shape}")
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        sample_envs = np.asarray(sample_envs, dtype=np.int64).reshape(-1)
        if not (len(labels) == len(sample_envs) == len(amplitudes)):
            raise ValueError("amplitudes, labels and sample_envs must have equal length")
        if len(labels) and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError(f"labels must lie in [0, {num_classes})")
        if len(sample_envs) and sample_envs.min() < 0:
            raise ValueError("environment ids must be non-negative")
        self.amplitudes = _freeze(amplitudes)
        self.labels = _freeze(labels)
        self.sample_envs = _freeze(sample_envs)
        self.num_classes = int(num_classes)
        self.manifest_meta = dict(manifest_meta or {})

    @property
    def env_ids(self) -> frozenset[int]:
        return frozenset(int(e) for e in np.unique(self.sample_envs))

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> CsiSample:
        return CsiSample(self.amplitudes[i], int(self.labels[i]), int(self.sample_envs[i]))

    def __iter__(self) -> Iterator[CsiSample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def samples(self) -> list[CsiSample]:
        return list(self)

    @classmethod
    def from_samples(cls, samples: Sequence[CsiSample], num_classes: int, manifest_meta=None) -> "Dataset":
        if samples:
            amps = np.stack([np.asarray(s.amplitude, dtype=np.float32) for s in samples])
        else:
            amps = np.zeros((0,) + SAMPLE_SHAPE, dtype=np.float32)
        return cls(amps, [s.label for s in samples], [s.env_id for s in samples], num_classes, manifest_meta)

    def subset(self, indices: np.ndarray | Sequence[int]) -> "Dataset":
        """Samples at ``indices`` in the given order.

        Contiguous ascending runs become array views rather than copies, which
        keeps environment splits of generated data cheap.
        """
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        if len(idx) and np.all(np.diff(idx) == 1):
            sl = slice(int(idx[0]), int(idx[-1]) + 1)
            return Dataset(self.amplitudes[sl], self.labels[sl], self.sample_envs[sl],
                           self.num_classes, self.manifest_meta)
        return Dataset(self.amplitudes[idx], self.labels[idx], self.sample_envs[idx],
                       self.num_classes, self.manifest_meta)

    def filter_envs(self, envs: Sequence[int]) -> "Dataset":
        return self.subset(np.flatnonzero(np.isin(self.sample_envs, list(envs))))

    def sample_checksums(self) -> list[str]:
        return [sample_checksum(a) for a in self.amplitudes]

    def equals(self, other: "Dataset") -> bool:
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.sample_envs, other.sample_envs)
            and self.amplitudes.shape == other.amplitudes.shape
            and self.amplitudes.tobytes() == other.amplitudes.tobytes()
        )

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, num_classes={self.num_classes}, env_ids={sorted(self.env_ids)})"


def concat_datasets(parts: Sequence[Dataset], num_classes: int | None = None) -> Dataset:
    if not parts:
        if num_classes is None:
            raise ValueError("cannot infer num_classes from an empty list")
        return Dataset(np.zeros((0,) + SAMPLE_SHAPE, np.float32), [], [], num_classes)
    nc = num_classes if num_classes is not None else parts[0].num_classes
    return Dataset(
        np.concatenate([p.amplitudes for p in parts]),
        np.concatenate([p.labels for p in parts]),
        np.concatenate([p.sample_envs for p in parts]),
        nc,
        parts[0].manifest_meta,
    )


def sample_checksum(amplitude: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(amplitude, dtype="<f4").tobytes()).hexdigest()


# -- packets ------------------------------------------------------------------


def downsample_packets(raw: np.ndarray, factor: int = 4) -> np.ndarray:
    """Keep every ``factor``-th packet: ``out[s, a, t] = raw[s, a, factor * t]``."""
    raw = np.asarray(raw)
    if raw.ndim != 3 or raw.shape[:2] != (NUM_SUBCARRIERS, NUM_ANTENNAS):
        raise ShapeMismatchError(f"expected [114, 3, T] input, got {raw.shape}")
    if raw.shape[2] % factor:
        raise ShapeMismatchError(f"packet count {raw.shape[2]} not divisible by {factor}")
    return raw[:, :, ::factor].copy()


# -- normalization ------------------------------------------------------------


@dataclass(frozen=True)
class NormStats:
    """Per-subcarrier mean/std, broadcast over antennas and packets."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float32).reshape(-1)
        std = np.asarray(self.std, dtype=np.float32).reshape(-1)
        if mean.shape != (NUM_SUBCARRIERS,) or std.shape != (NUM_SUBCARRIERS,):
            raise ShapeMismatchError(f"stats must have 114 entries, got {mean.shape} / {std.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", np.maximum(std, np.float32(STD_FLOOR)))

    @classmethod
    def identity(cls) -> "NormStats":
        return cls(np.zeros(NUM_SUBCARRIERS), np.ones(NUM_SUBCARRIERS))

    def apply(self, amplitudes: np.ndarray) -> np.ndarray:
        """Normalize ``[..., 114, 3, T]`` amplitudes (float32 result)."""
        a = np.asarray(amplitudes, dtype=np.float32)
        return (a - self.mean[:, None, None]) / self.std[:, None, None]


def iter_chunks(datasets: Dataset | Sequence[Dataset], chunk: int = 256) -> Iterator[np.ndarray]:
    """float64 blocks of amplitudes across one or several datasets."""
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    for ds in datasets:
        for i in range(0, len(ds), chunk):
            yield ds.amplitudes[i:i + chunk].astype(np.float64)


def compute_norm_stats(datasets: Dataset | Sequence[Dataset]) -> NormStats:
    """Per-subcarrier z-score statistics over every sample, antenna and packet.

    Several datasets are pooled, so source environments can share one set of
    statistics without being concatenated in memory.
    """
    total = np.zeros(NUM_SUBCARRIERS)
    count = 0
    for block in iter_chunks(datasets):
        total += block.sum(axis=(0, 2, 3))
        count += block.shape[0] * block.shape[2] * block.shape[3]
    if count == 0:
        raise ValueError("cannot compute statistics of an empty dataset")
    mean = total / count
    sq = np.zeros(NUM_SUBCARRIERS)
    for block in iter_chunks(datasets):
        sq += ((block - mean[None, :, None, None]) ** 2).sum(axis=(0, 2, 3))
    return NormStats(mean, np.sqrt(sq / count))


def normalize_sample(sample: CsiSample, stats: NormStats) -> CsiSample:
    amp = np.asarray(sample.amplitude)
    if amp.shape[:1] != (NUM_SUBCARRIERS,):
        raise ShapeMismatchError(f"sample has {amp.shape[0]} subcarriers, stats have 114")
    return CsiSample(stats.apply(amp), sample.label, sample.env_id)


def normalize_dataset(dataset: Dataset, stats: NormStats) -> Dataset:
    return Dataset(stats.apply(dataset.amplitudes), dataset.labels, dataset.sample_envs,
                   dataset.num_classes, dataset.manifest_meta)


# -- splits -------------------------------------------------------------------


def split_leave_one_env(dataset: Dataset, plan: SplitPlan) -> tuple[dict[int, Dataset], Dataset]:
    """Per-source-environment datasets plus the target-environment dataset."""
    present = dataset.env_ids
    missing = [e for e in (*plan.source_envs, plan.target_env) if e not in present]
    if missing:
        raise ValueError(f"split references environments absent from the dataset: {missing}")
    sources = {e: dataset.filter_envs([e]) for e in plan.source_envs}
    return sources, dataset.filter_envs([plan.target_env])


def split_holdout(dataset: Dataset, fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded ``(kept, held_out)`` split, stratified by (environment, class).

    Each (environment, class) cell gives ``round(fraction * n)`` samples to the
    held-out side; both sides keep the original sample order.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    rng = np.random.default_rng([seed, 17])
    held = []
    for e in sorted(dataset.env_ids):
        for c in range(dataset.num_classes):
            cell = np.flatnonzero((dataset.sample_envs == e) & (dataset.labels == c))
            k = int(round(fraction * len(cell)))
            held.extend(rng.permutation(cell)[:k])
    held = np.sort(np.asarray(held, dtype=np.int64))
    return dataset.subset(np.setdiff1d(np.arange(len(dataset)), held)), dataset.subset(held)


# -- persistence --------------------------------------------------------------


def save_samples(samples: Iterable[CsiSample], directory: str | os.PathLike, num_classes: int,
                 manifest_meta: Mapping[str, str] | None = None) -> Path:
    """Stream samples to ``directory`` one file at a time; returns the manifest path."""
    root = Path(directory)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sample in enumerate(samples):
        if not 0 <= sample.label < num_classes:
            raise ValueError(f"sample {i} label {sample.label} outside [0, {num_classes})")
        rel = f"samples/{i:06d}.f32"
        data = np.ascontiguousarray(sample.amplitude, dtype="<f4").tobytes()
        if len(data) != SAMPLE_BYTES:
            raise ShapeMismatchError(f"sample {i} has shape {np.shape(sample.amplitude)}")
        (root / rel).write_bytes(data)
        entries.append({
            "file": rel,
            "label": int(sample.label),
            "env_id": int(sample.env_id),
            "raw_len": NUM_PACKETS,
            "sha256": hashlib.sha256(data).hexdigest(),
        })
    manifest = {
        "version": MANIFEST_VERSION,
        "num_classes": int(num_classes),
        "meta": {str(k): str(v) for k, v in (manifest_meta or {}).items()},
        "samples": entries,
    }
    path = root / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=1))
    return path


def save_dataset(dataset: Dataset, directory: str | os.PathLike) -> Path:
    """Write samples and manifest under ``directory``; returns the manifest path."""
    return save_samples(iter(dataset), directory, dataset.num_classes, dataset.manifest_meta)


def _resolve_manifest(path: str | os.PathLike) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    if not p.is_file():
        raise MissingFileError(f"manifest not found: {p}")
    return p


@dataclass(frozen=True)
class Manifest:
    path: Path
    num_classes: int
    entries: list
    meta: dict

    def __len__(self) -> int:
        return len(self.entries)


def read_manifest(manifest_path: str | os.PathLike) -> Manifest:
    """Parse and check the manifest structure without touching sample files."""
    path = _resolve_manifest(manifest_path)
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedManifestError(f"{path}: {exc}") from exc
    if not isinstance(manifest, dict):
        raise MalformedManifestError(f"{path}: top level must be an object")
    if manifest.get("version") != MANIFEST_VERSION:
        raise MalformedManifestError(f"{path}: unsupported version {manifest.get('version')!r}")
    num_classes = manifest.get("num_classes")
    entries = manifest.get("samples")
    if not isinstance(num_classes, int) or num_classes < 1 or not isinstance(entries, list):
        raise MalformedManifestError(f"{path}: needs integer num_classes and a samples array")
    meta = manifest.get("meta") or {}
    return Manifest(path, num_classes, entries, {str(k): str(v) for k, v in meta.items()})


def _read_entry(man: Manifest, i: int) -> CsiSample:
    entry = man.entries[i]
    path = man.path
    try:
        rel, label, env_id, raw_len = entry["file"], entry["label"], entry["env_id"], entry["raw_len"]
    except (KeyError, TypeError) as exc:
        raise MalformedManifestError(f"{path}: sample {i} lacks {exc}") from exc
    if raw_len not in (NUM_PACKETS, RAW_PACKETS):
        raise MalformedManifestError(f"{path}: sample {i} has raw_len {raw_len}")
    if not (isinstance(label, int) and 0 <= label < man.num_classes):
        raise MalformedManifestError(f"{path}: sample {i} label {label!r} outside [0, {man.num_classes})")
    if not (isinstance(env_id, int) and env_id >= 0):
        raise MalformedManifestError(f"{path}: sample {i} env_id {env_id!r} invalid")
    fpath = path.parent / rel
    if not fpath.is_file():
        raise MissingFileError(f"sample file not found: {fpath}")
    data = fpath.read_bytes()
    expected = NUM_SUBCARRIERS * NUM_ANTENNAS * raw_len * 4
    if len(data) != expected:
        raise ShapeMismatchError(f"{fpath}: {len(data)} bytes, expected {expected}")
    if "sha256" in entry and hashlib.sha256(data).hexdigest() != entry["sha256"]:
        raise ChecksumError(f"{fpath}: checksum mismatch")
    amp = np.frombuffer(data, dtype="<f4").reshape(NUM_SUBCARRIERS, NUM_ANTENNAS, raw_len)
    if raw_len == RAW_PACKETS:
        amp = downsample_packets(amp)
    if not np.isfinite(amp).all():
        raise NonFiniteError(f"{fpath}: non-finite amplitude values")
    return CsiSample(amp, label, env_id)


def iter_manifest(manifest_path: str | os.PathLike) -> Iterator[CsiSample]:
    """Yield validated samples one by one, in manifest order."""
    man = read_manifest(manifest_path)
    for i in range(len(man)):
        yield _read_entry(man, i)


def load_dataset(manifest_path: str | os.PathLike, out: np.ndarray | None = None) -> Dataset:
    """Load a dataset from its manifest (or the directory that holds it).

    ``out`` may be a preallocated ``[n, 114, 3, 500]`` float32 array, e.g. a
    ``np.memmap``, for datasets that do not fit in memory.
    """
    man = read_manifest(manifest_path)
    n = len(man)
    if out is None:
        out = np.empty((n,) + SAMPLE_SHAPE, dtype=np.float32)
    elif out.shape != (n,) + SAMPLE_SHAPE or out.dtype != np.float32:
        raise ShapeMismatchError(f"out buffer must be float32 {(n,) + SAMPLE_SHAPE}, got {out.dtype} {out.shape}")
    labels = np.empty(n, dtype=np.int64)
    envs = np.empty(n, dtype=np.int64)
    for i in range(n):
        sample = _read_entry(man, i)
        out[i] = sample.amplitude
        labels[i] = sample.label
        envs[i] = sample.env_id
    return Dataset(out, labels, envs, man.num_classes, man.meta)
