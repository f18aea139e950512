"""Node-level and index-level prediction heads."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ContractError, ShapeError, Tensor

log = logging.getLogger(__name__)

INDEX_CODES = ("S5CONS", "S5FINL", "S5INFT", "S5ENRS", "S5UTIL")
MIN_CONSTITUENTS = 20
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class IndexSpec:
    code: str
    members: tuple[int, ...]
    min_members: int = MIN_CONSTITUENTS

    def __post_init__(self):
        if len(self.members) < self.min_members:
            raise ContractError(f"index {self.code} has {len(self.members)} constituents, "
                                f"needs at least {self.min_members}")


def init_head(rng: np.random.Generator, f: int, n_classes: int = 3, prefix: str = "head") -> dict[str, Tensor]:
    bound = 1.0 / np.sqrt(f)
    return {f"{prefix}.W": ag.parameter(rng.uniform(-bound, bound, (f, n_classes))),
            f"{prefix}.b": ag.parameter(np.zeros(n_classes))}


def head_logits(X: Tensor, params, prefix: str = "head") -> Tensor:
    W = params[f"{prefix}.W"]
    if X.shape[-1] != W.shape[0]:
        raise ShapeError(f"head expects {W.shape[0]} features, got {X.shape[-1]}")
    return ag.matmul(X, W) + params[f"{prefix}.b"]


def node_classify(E_bar: Tensor, params, prefix: str = "head") -> Tensor:
    """Y-hat = softmax(E-bar W + b), one probability row per company."""
    return ag.softmax(head_logits(E_bar, params, prefix))


def node_loss(Y_hat: Tensor, labels, reduction: str = "sum") -> Tensor:
    """-sum_i log Y_hat[i, y_i]; probabilities below 1e-12 are clamped."""
    Y_hat = ag.tensor(Y_hat)
    lab = np.asarray(labels, dtype=np.intp)
    if lab.shape != Y_hat.shape[:-1]:
        raise ShapeError(f"labels {lab.shape} vs predictions {Y_hat.shape}")
    onehot = np.zeros(Y_hat.shape)
    np.put_along_axis(onehot, lab[..., None], 1.0, axis=-1)
    picked = (Y_hat * onehot).sum(axis=-1)
    if np.any(picked.data < PROB_FLOOR):
        log.warning("clamping %d zero probabilities at the true class", int((picked.data < PROB_FLOOR).sum()))
    total = -ag.log(picked, floor=PROB_FLOOR).sum()
    if reduction == "mean":
        return total * (1.0 / max(lab.size, 1))
    return total


def mean_pool(E_bar: Tensor, members) -> Tensor:
    """Average of the member rows along the node axis."""
    idx = np.asarray(list(members), dtype=np.intp)
    if idx.size == 0:
        raise ContractError("cannot pool an empty constituent set")
    return ag.take(E_bar, idx, axis=E_bar.ndim - 2).mean(axis=-2)


def index_representation(g_pool: Tensor, g_own: Tensor, mode: str = "sum") -> Tensor:
    g_pool, g_own = ag.tensor(g_pool), ag.tensor(g_own)
    if mode == "sum":
        if g_pool.shape != g_own.shape:
            raise ShapeError(f"pooled {g_pool.shape} vs own {g_own.shape}")
        return g_pool + g_own
    if mode == "concat":
        return ag.concat([g_pool, g_own], axis=-1)
    raise ValueError(f"unknown combine mode {mode!r}")


def index_classify_and_loss(g: Tensor, params, label, prefix: str = "index_head") -> tuple[Tensor, Tensor]:
    logits = head_logits(g, params, prefix)
    return ag.softmax(logits), ag.cross_entropy_with_logits(logits, np.asarray(label), reduction="sum")
