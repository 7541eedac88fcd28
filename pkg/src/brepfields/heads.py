"""Task heads over frozen face codes.

Three heads: a 2-layer residual graph convolution over the face-adjacency
graph followed by a two-hidden-layer classifier (per-face segmentation), a
pooled part classifier (linear projection, permutation-invariant pool,
linear output), and a context-free per-face MLP. Heads only ever see code
matrices as constants, so backbone parameters cannot be disturbed by head
training.

Neighbor aggregation follows each face's loop-ordered neighbor list, and
pooling uses an elementwise max by default, so head outputs are bit-stable
under face re-labelling.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (Tensor, add_rowvec, concat, gather_rows,
                       log_softmax_last, max_rows, mean_rows)
from .encoder import CODE_DIM

GCN_WIDTH = CODE_DIM
FC_WIDTH = 64
POOL_WIDTH = 64
MLP_WIDTH = 64


def _glorot(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)),
                      size=(fan_in, fan_out))


def init_seg_params(seed: int, n_classes: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E6]))
    p = {}
    for layer in (1, 2):
        p[f"seg.gcn{layer}.W"] = _glorot(rng, GCN_WIDTH, GCN_WIDTH)
        p[f"seg.gcn{layer}.b"] = np.zeros(GCN_WIDTH)
    p["seg.fc1.W"] = _glorot(rng, GCN_WIDTH, FC_WIDTH)
    p["seg.fc1.b"] = np.zeros(FC_WIDTH)
    p["seg.fc2.W"] = _glorot(rng, FC_WIDTH, FC_WIDTH)
    p["seg.fc2.b"] = np.zeros(FC_WIDTH)
    p["seg.out.W"] = _glorot(rng, FC_WIDTH, n_classes)
    p["seg.out.b"] = np.zeros(n_classes)
    return p


def init_cls_params(seed: int, n_classes: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC15]))
    return {
        "cls.proj.W": _glorot(rng, CODE_DIM, POOL_WIDTH),
        "cls.proj.b": np.zeros(POOL_WIDTH),
        "cls.out.W": _glorot(rng, POOL_WIDTH, n_classes),
        "cls.out.b": np.zeros(n_classes),
    }


def init_mlp_params(seed: int, n_classes: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x317]))
    return {
        "mlp.W1": _glorot(rng, CODE_DIM, MLP_WIDTH),
        "mlp.b1": np.zeros(MLP_WIDTH),
        "mlp.out.W": _glorot(rng, MLP_WIDTH, n_classes),
        "mlp.out.b": np.zeros(n_classes),
    }


def _gcn_layer(pt: dict, layer: int, h: Tensor, neighbors: list) -> Tensor:
    rows = []
    for nbrs in neighbors:
        if nbrs:
            rows.append(mean_rows(gather_rows(h, nbrs)).reshape(1, GCN_WIDTH))
        else:
            rows.append(h[0:1, :] * 0.0)  # isolated face: aggregate = 0
    agg = concat(rows, axis=0) if len(rows) > 1 else rows[0]
    update = add_rowvec(agg @ pt[f"seg.gcn{layer}.W"],
                        pt[f"seg.gcn{layer}.b"]).relu()
    return h + update


def seg_forward(pt: dict, codes: Tensor, neighbors: list) -> Tensor:
    """Per-face logits from codes plus face-adjacency context."""
    if codes.value.shape[0] != len(neighbors):
        raise ValueError(f"{codes.value.shape[0]} codes for "
                         f"{len(neighbors)} graph nodes")
    h = _gcn_layer(pt, 1, codes, neighbors)
    h = _gcn_layer(pt, 2, h, neighbors)
    h = add_rowvec(h @ pt["seg.fc1.W"], pt["seg.fc1.b"]).relu()
    h = add_rowvec(h @ pt["seg.fc2.W"], pt["seg.fc2.b"]).relu()
    return add_rowvec(h @ pt["seg.out.W"], pt["seg.out.b"])


def cls_forward(pt: dict, codes: Tensor, pool: str = "max") -> Tensor:
    """Part logits (1, C); exactly permutation invariant for max pooling."""
    proj = add_rowvec(codes @ pt["cls.proj.W"], pt["cls.proj.b"])
    if pool == "max":
        pooled = max_rows(proj).reshape(1, POOL_WIDTH)
    elif pool == "mean":
        pooled = mean_rows(proj).reshape(1, POOL_WIDTH)
    else:
        raise ValueError(f"unknown pool {pool!r}")
    return add_rowvec(pooled @ pt["cls.out.W"], pt["cls.out.b"])


def mlp_forward(pt: dict, codes: Tensor) -> Tensor:
    h = add_rowvec(codes @ pt["mlp.W1"], pt["mlp.b1"]).relu()
    return add_rowvec(h @ pt["mlp.out.W"], pt["mlp.out.b"])


def cross_entropy(logits: Tensor, labels, n_classes: int) -> Tensor:
    """Mean negative log-likelihood over labeled rows."""
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros((len(labels), n_classes))
    onehot[np.arange(len(labels)), labels] = 1.0
    logp = log_softmax_last(logits)
    return (logp * logits.tape.tensor(onehot)).sum() * (-1.0 / len(labels))


def predict(logits: np.ndarray) -> np.ndarray:
    """Argmax with ties broken toward the lowest class index."""
    return np.argmax(logits, axis=-1)
