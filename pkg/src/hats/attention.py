"""Two-level relational attention: neighbors within a relation, then across relations.

Score vectors are stored whole (length 2f+d) and split into their three
concatenation blocks at use, which equals scoring the concatenated vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ContractError, Tensor
from .graph import NeighborTable, RelationGraph


def init_attention(rng: np.random.Generator, n_relations: int, f: int, d: int = 16) -> dict[str, Tensor]:
    bound = 1.0 / np.sqrt(2 * f + d)
    return {
        "rel_emb": ag.parameter(rng.uniform(-0.1, 0.1, (n_relations, d))),
        "W_s": ag.parameter(rng.uniform(-bound, bound, 2 * f + d)),
        "b_s": ag.parameter(0.0),
        "W_r": ag.parameter(rng.uniform(-bound, bound, 2 * f + d)),
        "b_r": ag.parameter(0.0),
    }


@dataclass
class AttentionTrace:
    """Weights used in one forward pass (numpy copies, read-only by convention).

    ``state[m]`` has shape (..., n, K_m) aligned with the neighbor table;
    ``relation`` has shape (..., n, M) with zeros where a relation is inactive.
    """

    state: list[np.ndarray]
    relation: np.ndarray
    active: np.ndarray


def _state_logits(E: Tensor, m: int, idx: np.ndarray, params) -> Tensor:
    f = E.shape[-1]
    d = params["rel_emb"].shape[-1]
    W = params["W_s"]
    w_rel, w_i, w_j = W[:d], W[d:d + f], W[d + f:]
    const = ag.matmul(params["rel_emb"][m], w_rel) + params["b_s"]
    a_i = ag.matmul(E, w_i)  # (..., n)
    a_j = ag.take(ag.matmul(E, w_j), idx, axis=-1)  # (..., n, K)
    return a_j + a_i.reshape(a_i.shape + (1,)) + const


def state_summaries(E: Tensor, table: NeighborTable, params) -> tuple[list[Tensor], list[Tensor]]:
    """s_i^m for every relation m: attention-weighted sums of neighbor states."""
    summaries, weights = [], []
    node_axis = E.ndim - 2
    for m, (idx, mask) in enumerate(zip(table.index, table.mask)):
        v = _state_logits(E, m, idx, params)
        alpha = ag.masked_softmax(v, mask)  # (..., n, K)
        nb = ag.take(E, idx, axis=node_axis)  # (..., n, K, f)
        # order-free reduction: relabeling nodes permutes the output rows exactly
        summaries.append(ag.sum_unordered(alpha.reshape(alpha.shape + (1,)) * nb, axis=-2))
        weights.append(alpha)
    return summaries, weights


def relation_aggregate(E: Tensor, summaries: list[Tensor], active: np.ndarray, params) -> tuple[Tensor, Tensor]:
    """e_i^r = sum over active relations of softmax-weighted s_i^m."""
    f = E.shape[-1]
    W = params["W_r"]
    w_s, w_i, w_rel = W[:f], W[f:2 * f], W[2 * f:]
    base = ag.matmul(E, w_i) + params["b_r"]
    rel_term = ag.matmul(params["rel_emb"], w_rel)  # (M,)
    logits = ag.stack([ag.matmul(s, w_s) for s in summaries], axis=-1)  # (..., n, M)
    logits = logits + base.reshape(base.shape + (1,)) + rel_term
    beta = ag.masked_softmax(logits, active)
    S = ag.stack(summaries, axis=-2)  # (..., n, M, f)
    agg = ag.matmul(beta.reshape(beta.shape[:-1] + (1, beta.shape[-1])), S)
    return agg.reshape(agg.shape[:-2] + (f,)), beta


def update_nodes(E: Tensor, table: NeighborTable, params, return_trace: bool = False):
    """E-bar = E + e^r; nodes with no neighbor in any relation keep E unchanged."""
    if E.shape[-2] != table.active.shape[0]:
        raise ContractError(f"{E.shape[-2]} node states for a {table.active.shape[0]}-node graph")
    if table.active.shape[1] == 0:
        out = E
        trace = AttentionTrace([], np.zeros(E.shape[:-1] + (0,)), table.active)
        return (out, trace) if return_trace else out
    summaries, weights = state_summaries(E, table, params)
    agg, beta = relation_aggregate(E, summaries, table.active, params)
    out = E + agg
    if return_trace:
        return out, AttentionTrace([w.data.copy() for w in weights], beta.data.copy(), table.active)
    return out


def attention_scores(E: Tensor, table: NeighborTable, params) -> AttentionTrace:
    with ag.no_grad():
        _, trace = update_nodes(ag.tensor(E), table, params, return_trace=True)
    return trace


# ---------------------------------------------------------------- single-node API

def state_attention(i: int, m: int, E: Tensor, graph: RelationGraph, params) -> Tensor:
    """s_i^m for one node; raises when i has no neighbor under relation m."""
    nbrs = graph.neighbors(i, m)
    if not nbrs:
        raise ContractError(f"node {i} has no neighbors under relation {graph.relations[m]}")
    idx = np.array(nbrs)
    f = E.shape[-1]
    d = params["rel_emb"].shape[-1]
    W = params["W_s"]
    const = ag.matmul(params["rel_emb"][m], W[:d]) + params["b_s"]
    v = ag.take(ag.matmul(E, W[d + f:]), idx, axis=0) + ag.matmul(E[i], W[d:d + f]) + const
    alpha = ag.softmax(v)
    return ag.matmul(alpha, ag.take(E, idx, axis=0))


def relation_attention(i: int, summaries: dict[int, Tensor], E: Tensor, params) -> Tensor:
    """e_i^r from the summaries of node i's active relations; zeros if none."""
    f = E.shape[-1]
    if not summaries:
        return ag.tensor(np.zeros(f))
    W = params["W_r"]
    ms = sorted(summaries)
    e_i = E[i]
    logits = ag.stack([ag.matmul(summaries[m], W[:f]) + ag.matmul(e_i, W[f:2 * f])
                       + ag.matmul(params["rel_emb"][m], W[2 * f:]) + params["b_r"] for m in ms])
    beta = ag.softmax(logits)
    return ag.matmul(beta, ag.stack([summaries[m] for m in ms]))
