"""LSTM and GRU sequence encoders over change-rate windows."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import ContractError, Tensor


def init_lstm(rng: np.random.Generator, hidden: int, input_size: int = 1, prefix: str = "enc") -> dict[str, Tensor]:
    """Gate blocks are ordered input, forget, output, candidate."""
    bound = 1.0 / np.sqrt(hidden)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    return {
        f"{prefix}.W_x": ag.parameter(rng.uniform(-bound, bound, (input_size, 4 * hidden))),
        f"{prefix}.W_h": ag.parameter(rng.uniform(-bound, bound, (hidden, 4 * hidden))),
        f"{prefix}.b": ag.parameter(b),
    }


def init_gru(rng: np.random.Generator, hidden: int, input_size: int = 1, prefix: str = "enc") -> dict[str, Tensor]:
    """Gate blocks are ordered update, reset; the candidate has its own weights."""
    bound = 1.0 / np.sqrt(hidden)
    u = lambda *shape: ag.parameter(rng.uniform(-bound, bound, shape))  # noqa: E731
    return {
        f"{prefix}.W_x": u(input_size, 2 * hidden),
        f"{prefix}.W_h": u(hidden, 2 * hidden),
        f"{prefix}.b": ag.parameter(np.zeros(2 * hidden)),
        f"{prefix}.Wc_x": u(input_size, hidden),
        f"{prefix}.Wc_h": u(hidden, hidden),
        f"{prefix}.bc": ag.parameter(np.zeros(hidden)),
    }


def lstm_cell(x, h, c, params: dict[str, Tensor], prefix: str = "enc") -> tuple[Tensor, Tensor]:
    """One step; ``x`` is (..., input), ``h`` and ``c`` are (..., hidden)."""
    f = params[f"{prefix}.W_h"].shape[0]
    z = ag.matmul(x, params[f"{prefix}.W_x"]) + params[f"{prefix}.b"] + ag.matmul(h, params[f"{prefix}.W_h"])
    gates = ag.sigmoid(z[..., :3 * f])
    i, fg, o = gates[..., :f], gates[..., f:2 * f], gates[..., 2 * f:]
    g = ag.tanh(z[..., 3 * f:])
    c_new = fg * c + i * g
    h_new = o * ag.tanh(c_new)
    return h_new, c_new


def gru_cell(x, h, params: dict[str, Tensor], prefix: str = "enc") -> Tensor:
    """h' = (1 - u) * cand + u * h with cand = tanh(x Wc_x + (r * h) Wc_h + bc)."""
    f = params[f"{prefix}.W_h"].shape[0]
    xz = ag.matmul(x, params[f"{prefix}.W_x"]) + params[f"{prefix}.b"]
    xc = ag.matmul(x, params[f"{prefix}.Wc_x"]) + params[f"{prefix}.bc"]
    z = ag.sigmoid(xz + ag.matmul(h, params[f"{prefix}.W_h"]))
    u, r = z[..., :f], z[..., f:]
    cand = ag.tanh(xc + ag.matmul(r * h, params[f"{prefix}.Wc_h"]))
    return (1.0 - u) * cand + u * h


def encode_sequence(windows, params: dict[str, Tensor], kind: str = "lstm", prefix: str = "enc",
                    expected_length: int | None = None) -> Tensor:
    """Final hidden state after reading each window oldest-first.

    ``windows`` has shape (..., L); every leading index is encoded independently.
    """
    w = np.asarray(windows.data if isinstance(windows, Tensor) else windows, dtype=np.float64)
    if w.ndim == 0:
        raise ContractError("window must have a time axis")
    if expected_length is not None and w.shape[-1] != expected_length:
        raise ContractError(f"window length {w.shape[-1]} != {expected_length}")
    lead = w.shape[:-1]
    flat = w.reshape(-1, w.shape[-1])
    hidden = params[f"{prefix}.W_h"].shape[0]
    h = ag.tensor(np.zeros((flat.shape[0], hidden)))
    cell = kind.lower()
    steps = flat.T[..., None]
    if cell == "lstm":
        c = ag.tensor(np.zeros((flat.shape[0], hidden)))
        for t in range(flat.shape[1]):
            h, c = lstm_cell(steps[t], h, c, params, prefix)
    elif cell == "gru":
        for t in range(flat.shape[1]):
            h = gru_cell(steps[t], h, params, prefix)
    else:
        raise ValueError(f"unknown encoder kind {kind!r}")
    return h.reshape(lead + (hidden,))
