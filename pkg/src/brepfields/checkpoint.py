"""Checkpoint container: named parameter tensors + optimizer state + config.

A checkpoint is a single binary file:

    magic "BFCHKPT1" | uint64 LE header length | header JSON (utf-8) | data

The header lists every array (name, kind, shape) in sorted order together
with the optimizer scalars, the config dict, and a sha256 of the canonical
config JSON. Array data follows as raw little-endian float64, C order, in
header order. Writes are fully deterministic, so identical contents produce
byte-identical files and a save/load round trip is bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .autodiff import AdamState

MAGIC = b"BFCHKPT1"
FORMAT_VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    params: dict
    adam: AdamState | None
    config: dict

    @property
    def config_fingerprint(self) -> str:
        return config_hash(self.config)


def _array_entries(params: dict, adam: AdamState | None):
    entries = []
    for name in sorted(params):
        entries.append(("param", name, params[name]))
    if adam is not None:
        for name in sorted(adam.m):
            entries.append(("adam_m", name, adam.m[name]))
        for name in sorted(adam.v):
            entries.append(("adam_v", name, adam.v[name]))
    return entries


def save_checkpoint(path, params: dict, adam: AdamState | None = None,
                    config: dict | None = None) -> None:
    config = config or {}
    entries = _array_entries(params, adam)
    header = {
        "format_version": FORMAT_VERSION,
        "arrays": [{"kind": kind, "name": name, "shape": list(arr.shape)}
                   for kind, name, arr in entries],
        "adam": None if adam is None else {
            "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
            "eps": adam.eps, "step": adam.step,
        },
        "config": config,
        "config_hash": config_hash(config),
    }
    blob = canonical_json(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint64(len(blob)).tobytes())
        f.write(blob)
        for _, _, arr in entries:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = np.frombuffer(f.read(8), dtype="<u8")
        header = json.loads(f.read(int(hlen)).decode("utf-8"))
        params: dict = {}
        adam_m: dict = {}
        adam_v: dict = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape).copy()
            {"param": params, "adam_m": adam_m, "adam_v": adam_v}[entry["kind"]][entry["name"]] = arr
    adam = None
    if header["adam"] is not None:
        a = header["adam"]
        adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"],
                         eps=a["eps"], step=a["step"], m=adam_m, v=adam_v)
    return Checkpoint(params=params, adam=adam, config=header["config"])
