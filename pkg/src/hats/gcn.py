"""Two graph-convolution layers plus a prediction layer on a fixed adjacency."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor


def init_gcn(rng: np.random.Generator, f: int, h1: int = 32, h2: int = 16, n_classes: int = 3) -> dict[str, Tensor]:
    def glorot(a, b):
        lim = np.sqrt(6.0 / (a + b))
        return ag.parameter(rng.uniform(-lim, lim, (a, b)))

    return {"gcn.W0": glorot(f, h1), "gcn.W1": glorot(h1, h2), "gcn.W2": glorot(h2, n_classes)}


def gcn_logits(X: Tensor, A_hat: np.ndarray, params) -> Tensor:
    """A relu(A relu(A X W0) W1) W2 for node features X of shape (..., n, f)."""
    A = np.asarray(A_hat, dtype=np.float64)
    n = X.shape[-2]
    if A.shape != (n, n):
        raise ShapeError(f"adjacency {A.shape} does not match {n} nodes")
    H = ag.relu(ag.matmul(A, ag.matmul(X, params["gcn.W0"])))
    H = ag.relu(ag.matmul(A, ag.matmul(H, params["gcn.W1"])))
    return ag.matmul(A, ag.matmul(H, params["gcn.W2"]))


def gcn_forward(X: Tensor, A_hat: np.ndarray, params) -> Tensor:
    """Class probabilities, one row per node."""
    return ag.softmax(gcn_logits(X, A_hat, params))
