"""Conditional neural field: (u, v) + face code -> (x, y, z, d).

Four fully connected layers; the raw input (coordinates plus conditioning
code) is re-concatenated into every hidden layer's input; hidden
activations are ReLU, the output layer is linear. One field jointly decodes
the explicit supporting surface and the implicit clip-boundary signed
distance.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, add_rowvec, concat
from .encoder import CODE_DIM

INPUT_DIM = 2 + CODE_DIM
OUTPUT_DIM = 4
DEFAULT_HIDDEN = 256


def init_decoder_params(seed: int, hidden: int = DEFAULT_HIDDEN) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDEC]))

    def he(fan_in, fan_out):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))

    p = {
        "dec.W1": he(INPUT_DIM, hidden),
        "dec.b1": np.zeros(hidden),
        "dec.W2": he(hidden + INPUT_DIM, hidden),
        "dec.b2": np.zeros(hidden),
        "dec.W3": he(hidden + INPUT_DIM, hidden),
        "dec.b3": np.zeros(hidden),
        "dec.W4": rng.normal(0.0, np.sqrt(1.0 / (hidden + INPUT_DIM)),
                             size=(hidden + INPUT_DIM, OUTPUT_DIM)),
        "dec.b4": np.zeros(OUTPUT_DIM),
    }
    return p


def decode(pt: dict, codes: Tensor, uv: Tensor) -> Tensor:
    """Forward pass for a batch of (uv row, code row) pairs -> (N, 4)."""
    x = concat([uv, codes], axis=1)
    h = add_rowvec(x @ pt["dec.W1"], pt["dec.b1"]).relu()
    h = add_rowvec(concat([h, x], axis=1) @ pt["dec.W2"], pt["dec.b2"]).relu()
    h = add_rowvec(concat([h, x], axis=1) @ pt["dec.W3"], pt["dec.b3"]).relu()
    return add_rowvec(concat([h, x], axis=1) @ pt["dec.W4"], pt["dec.b4"])


def decode_np(params: dict, codes: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Tape-free forward pass (evaluation only)."""
    x = np.concatenate([uv, codes], axis=1)
    h = np.maximum(x @ params["dec.W1"] + params["dec.b1"], 0.0)
    h = np.maximum(np.concatenate([h, x], axis=1) @ params["dec.W2"]
                   + params["dec.b2"], 0.0)
    h = np.maximum(np.concatenate([h, x], axis=1) @ params["dec.W3"]
                   + params["dec.b3"], 0.0)
    return np.concatenate([h, x], axis=1) @ params["dec.W4"] + params["dec.b4"]


def field_loss(pred: Tensor, target: np.ndarray, lam: float = 1.0) -> Tensor:
    """Mean over samples of |xyz error|^2 + lam * (d error)^2."""
    tape = pred.tape
    diff = pred - tape.tensor(target)
    n = target.shape[0]
    xyz_term = diff[:, 0:3].square().sum()
    d_term = diff[:, 3:4].square().sum()
    return (xyz_term + d_term * lam) * (1.0 / n)


def field_loss_np(pred: np.ndarray, target: np.ndarray,
                  lam: float = 1.0) -> float:
    diff = pred - target
    return float((diff[:, 0:3] ** 2).sum() + lam * (diff[:, 3] ** 2).sum()) \
        / target.shape[0]


def eval_metrics(pred: np.ndarray, target: np.ndarray) -> dict:
    """xyz_error: mean pointwise Euclidean distance between predicted and
    true surface points; sdf_error: mean absolute clip-distance error."""
    xyz = float(np.linalg.norm(pred[:, 0:3] - target[:, 0:3], axis=1).mean())
    sdf = float(np.abs(pred[:, 3] - target[:, 3]).mean())
    return {"xyz_error": xyz, "sdf_error": sdf}


def decode_checkpoint(params: dict, code: np.ndarray,
                      uv: np.ndarray) -> np.ndarray:
    """Decode one face's code over arbitrary uv samples (numpy path)."""
    codes = np.broadcast_to(code, (len(uv), CODE_DIM))
    return decode_np(params, np.ascontiguousarray(codes),
                     np.asarray(uv, dtype=np.float64))
