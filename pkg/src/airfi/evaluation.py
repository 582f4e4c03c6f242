"""Leave-one-environment-out evaluation, ablation grids and code export."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .config import ABLATION_ARMS, AirFiConfig, arm_config
from .csi_core import Dataset, SplitPlan, env_letter, split_leave_one_env
from .training import TrainedModel, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AccuracyTable:
    per_class: dict[int, float]
    overall: float
    env_index_label: str
    n_per_class: dict[int, int]

    def __post_init__(self):
        for c, acc in self.per_class.items():
            if not 0.0 <= acc <= 1.0:
                raise ValueError(f"class {c} accuracy {acc} outside [0, 1]")
        total = sum(self.n_per_class.values())
        if total:
            weighted = sum(self.per_class[c] * n for c, n in self.n_per_class.items()) / total
            if abs(weighted - self.overall) > 1e-9:
                raise ValueError(f"overall {self.overall} disagrees with per-class mean {weighted}")

    @classmethod
    def from_predictions(cls, predictions, labels, num_classes: int, label: str = "") -> "AccuracyTable":
        predictions = np.asarray(predictions).reshape(-1)
        labels = np.asarray(labels).reshape(-1)
        if predictions.shape != labels.shape:
            raise ValueError("predictions and labels differ in length")
        per_class, counts = {}, {}
        for c in range(num_classes):
            mask = labels == c
            n = int(mask.sum())
            if n:
                per_class[c] = float(np.count_nonzero(predictions[mask] == c)) / n
                counts[c] = n
        correct = int(np.count_nonzero(predictions == labels))
        overall = correct / len(labels) if len(labels) else 0.0
        return cls(per_class, overall, label, counts)

    def to_json(self) -> dict:
        return {
            "per_class": {str(c): a for c, a in self.per_class.items()},
            "overall": self.overall,
            "env_index_label": self.env_index_label,
            "n_per_class": {str(c): n for c, n in self.n_per_class.items()},
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "AccuracyTable":
        return cls({int(c): float(a) for c, a in obj["per_class"].items()}, float(obj["overall"]),
                   str(obj["env_index_label"]), {int(c): int(n) for c, n in obj["n_per_class"].items()})


def _split_label(model: TrainedModel, test: Dataset) -> str:
    sources = "".join(env_letter(e) for e in model.source_envs)
    return sources + "-" + "".join(env_letter(e) for e in sorted(test.env_ids))


def evaluate(model: TrainedModel, test: Dataset, label: str | None = None) -> AccuracyTable:
    """Accuracy of ``argmax classify(encode(x))`` against the true labels."""
    if len(test) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if test.num_classes != model.num_classes:
        raise ValueError(f"model has {model.num_classes} classes, dataset declares {test.num_classes}")
    preds = model.predict(test.amplitudes)
    return AccuracyTable.from_predictions(preds, test.labels, model.num_classes,
                                          _split_label(model, test) if label is None else label)


# -- ablation -------------------------------------------------------------------


@dataclass
class AblationReport:
    """``tables[arm][split]`` holds one AccuracyTable per seed."""

    arms: tuple[str, ...]
    splits: tuple[str, ...]
    seeds: tuple[int, ...]
    tables: dict[str, dict[str, list[AccuracyTable]]] = field(default_factory=dict)

    def mean_overall(self, arm: str, split: str) -> float:
        return float(np.mean([t.overall for t in self.tables[arm][split]]))

    def grid(self) -> dict[str, dict[str, float]]:
        return {a: {s: self.mean_overall(a, s) for s in self.splits} for a in self.arms}

    def format(self) -> str:
        width = max(len(a) for a in self.arms) + 2
        lines = [" " * width + "".join(f"{s:>9}" for s in self.splits)]
        for a in self.arms:
            lines.append(f"{a:<{width}}" + "".join(f"{100 * self.mean_overall(a, s):>9.2f}" for s in self.splits))
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {
            "arms": list(self.arms), "splits": list(self.splits), "seeds": list(self.seeds),
            "grid": self.grid(),
            "tables": {a: {s: [t.to_json() for t in ts] for s, ts in by.items()} for a, by in self.tables.items()},
        }


def run_ablation_suite(data: Dataset, base_config: AirFiConfig = AirFiConfig(),
                       seeds: Sequence[int] = (0, 1, 2), arms: Sequence[str] = tuple(ABLATION_ARMS),
                       target_envs: Sequence[int] | None = None,
                       on_model: Callable[[str, SplitPlan, int, TrainedModel], None] | None = None) -> AblationReport:
    """Train every arm on every leave-one-out split with shared seeds.

    ``on_model`` sees each trained model before it is discarded, which lets a
    caller reuse models (for few-shot runs, say) without retraining.
    """
    env_ids = sorted(data.env_ids)
    targets = env_ids if target_envs is None else list(target_envs)
    plans = [SplitPlan.leave_one_out(env_ids, t) for t in targets]
    report = AblationReport(tuple(arms), tuple(p.name for p in plans), tuple(seeds))
    for arm in arms:
        report.tables[arm] = {p.name: [] for p in plans}
    for plan in plans:
        sources, target = split_leave_one_env(data, plan)
        for arm in arms:
            for seed in seeds:
                cfg = arm_config(base_config, arm).with_flat(**{"train.seed": seed})
                model = train(sources, cfg, keep_reservoir=on_model is not None)
                table = evaluate(model, target, plan.name)
                report.tables[arm][plan.name].append(table)
                log.info("%s %s seed %d: %.4f", plan.name, arm, seed, table.overall)
                if on_model is not None:
                    on_model(arm, plan, seed, model)
                del model
    return report


# -- feature export -----------------------------------------------------------------


def export_features(model: TrainedModel, datasets: Mapping[str, Dataset] | Dataset,
                    path: str | os.PathLike) -> int:
    """Write encoded codes as CSV rows ``code_0..code_{d-1}, label, env_id, split``.

    ``datasets`` maps a split tag to a dataset (a bare Dataset is tagged by
    whether its environments were seen in training). Rows follow mapping
    order, then sample order. Returns the number of rows written.
    """
    if isinstance(datasets, Dataset):
        datasets = {"": datasets}
    dim = model.config.model.encoder.latent_dim
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"code_{i}" for i in range(dim)] + ["label", "env_id", "split"])
        for tag, ds in datasets.items():
            if len(ds) == 0:
                continue
            codes = model.encode(ds.amplitudes)
            for z, y, e in zip(codes, ds.labels, ds.sample_envs):
                split = tag or ("source" if int(e) in model.source_envs else "target")
                writer.writerow([repr(float(v)) for v in z] + [int(y), int(e), split])
                rows += 1
    return rows


def read_features(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    """Inverse of :func:`export_features`: ``(codes, labels, env_ids, splits)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 3
        codes, labels, envs, splits = [], [], [], []
        for row in reader:
            codes.append([float(v) for v in row[:dim]])
            labels.append(int(row[dim]))
            envs.append(int(row[dim + 1]))
            splits.append(row[dim + 2])
    return (np.asarray(codes, dtype=np.float64).reshape(-1, dim), np.asarray(labels, dtype=np.int64),
            np.asarray(envs, dtype=np.int64), splits)


def write_table(table: AccuracyTable, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(table.to_json(), indent=1))
