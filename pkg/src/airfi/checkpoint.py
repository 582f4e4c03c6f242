"""Single-file binary checkpoints for trained models.

Layout (all integers little-endian)::

    8 bytes   magic b"AIRFICKP"
    u32       format version
    32 bytes  sha256 of everything after this field
    u64       length of the JSON index
    ...       JSON index: metadata plus {name, dtype, shape, offset, nbytes} per array
    ...       raw array data, C order, offsets relative to the end of the index

Arrays keep their in-memory dtype, so a save/load cycle is bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from .config import AirFiConfig
from .csi_core import NormStats
from .feat_augment import ClasswiseCovariance
from .training import AirFiNet, TrainedModel

MAGIC = b"AIRFICKP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sI32s")
_LEN = struct.Struct("<Q")


class CheckpointError(Exception):
    """Unreadable checkpoint."""


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


def _arrays(model: TrainedModel) -> dict[str, np.ndarray]:
    arrays = {f"net.{k}": v.detach().cpu().numpy() for k, v in model.net.state_dict().items()}
    arrays["cov.diag"] = model.cov.diag.detach().cpu().numpy()
    arrays["norm.mean"] = model.norm.mean
    arrays["norm.std"] = model.norm.std
    if model.reservoir is not None:
        arrays["reservoir"] = np.asarray(model.reservoir)
    return {k: np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<")) for k, a in arrays.items()}


def save_checkpoint(model: TrainedModel, path: str | os.PathLike) -> Path:
    arrays = _arrays(model)
    entries, offset = [], 0
    for name, a in arrays.items():
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                        "offset": offset, "nbytes": a.nbytes})
        offset += a.nbytes
    index = {
        "config": model.config.to_flat(),
        "fingerprint": model.fingerprint,
        "num_classes": model.num_classes,
        "source_envs": list(model.source_envs),
        "gamma": float(model.gamma).hex(),
        "arrays": entries,
    }
    index_bytes = json.dumps(index, sort_keys=True).encode()
    digest = hashlib.sha256(_LEN.pack(len(index_bytes)) + index_bytes)
    for a in arrays.values():
        digest.update(memoryview(a).cast("B"))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, digest.digest()))
        fh.write(_LEN.pack(len(index_bytes)))
        fh.write(index_bytes)
        for a in arrays.values():
            fh.write(memoryview(a).cast("B"))
    os.replace(tmp, path)
    return path


def read_index(raw: bytes, path="checkpoint") -> tuple[dict, memoryview]:
    """Validate header and checksum; returns the JSON index and the data section."""
    if len(raw) < _HEADER.size + _LEN.size:
        raise CorruptCheckpointError(f"{path}: truncated header")
    magic, version, digest = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: not an airfi checkpoint")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    body = memoryview(raw)[_HEADER.size:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError(f"{path}: checksum mismatch")
    (n,) = _LEN.unpack_from(body)
    try:
        index = json.loads(bytes(body[_LEN.size:_LEN.size + n]))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable index") from exc
    return index, body[_LEN.size + n:]


def load_checkpoint(path: str | os.PathLike) -> TrainedModel:
    index, data = read_index(Path(path).read_bytes(), path)
    arrays = {}
    for e in index["arrays"]:
        chunk = data[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CorruptCheckpointError(f"{path}: array {e['name']} runs past the end of the file")
        arrays[e["name"]] = np.frombuffer(chunk, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()

    config = AirFiConfig.from_flat(index["config"])
    if config.fingerprint() != index["fingerprint"]:
        raise CorruptCheckpointError(f"{path}: stored config does not match its fingerprint")
    num_classes = index["num_classes"]
    state = {k[4:]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("net.")}
    dtype = next(iter(state.values())).dtype
    net = AirFiNet(config, num_classes).to(dtype)
    net.load_state_dict(state)
    cov = ClasswiseCovariance.from_tensor(torch.from_numpy(arrays["cov.diag"]))
    norm = NormStats(arrays["norm.mean"], arrays["norm.std"])
    return TrainedModel(net.eval(), cov, norm, config, num_classes, tuple(index["source_envs"]),
                        float.fromhex(index["gamma"]), arrays.get("reservoir"))
