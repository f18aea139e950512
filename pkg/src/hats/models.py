"""Model assemblies: encoder-only, GCN, GCN-TopK, HATS and the index model."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .attention import AttentionTrace, init_attention, update_nodes
from .autograd import Tensor
from .encoders import encode_sequence, init_gru, init_lstm
from .gcn import gcn_logits, init_gcn
from .graph import NeighborTable, RelationGraph, to_adjacency
from .heads import head_logits, index_representation, init_head, mean_pool

MODEL_KINDS = ("hats", "gcn", "gcn-topk", "encoder")
CHECKPOINT_FORMAT = "hats-checkpoint"
CHECKPOINT_VERSION = 1


class UnsupportedModelError(TypeError):
    pass


@dataclass
class ModelSpec:
    kind: str = "hats"
    encoder: str = "lstm"
    hidden: int = 64
    rel_dim: int = 16
    gcn_h1: int = 32
    gcn_h2: int = 16
    dropout: float = 0.3
    relations: tuple[str, ...] | None = None  # subset used by gcn-topk

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"model kind must be one of {MODEL_KINDS}, got {self.kind!r}")


@dataclass
class NodeModel:
    """Encoder + optional relational module + 3-class head for every company."""

    spec: ModelSpec
    graph: RelationGraph
    params: dict[str, Tensor]
    input_scale: float = 1.0
    _table: NeighborTable | None = field(default=None, repr=False)
    _adj: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def create(cls, spec: ModelSpec, graph: RelationGraph, seed: int, input_scale: float = 1.0) -> "NodeModel":
        rng = np.random.default_rng(seed)
        init = init_lstm if spec.encoder == "lstm" else init_gru
        params = dict(init(rng, spec.hidden))
        if spec.kind == "hats":
            params.update(init_attention(rng, graph.n_relations, spec.hidden, spec.rel_dim))
        if spec.kind in ("gcn", "gcn-topk"):
            params.update(init_gcn(rng, spec.hidden, spec.gcn_h1, spec.gcn_h2))
        else:
            params.update(init_head(rng, spec.hidden))
        return cls(spec, graph, params, input_scale)

    @property
    def table(self) -> NeighborTable:
        if self._table is None:
            self._table = self.graph.neighbor_table()
        return self._table

    @property
    def adjacency(self) -> np.ndarray:
        if self._adj is None:
            rel = self.spec.relations if self.spec.kind == "gcn-topk" else None
            self._adj = to_adjacency(self.graph, rel).matrix
        return self._adj

    def encode(self, windows: np.ndarray) -> Tensor:
        return encode_sequence(np.asarray(windows) * self.input_scale, self.params, self.spec.encoder)

    def represent(self, windows: np.ndarray, trace: bool = False):
        """Node representations before the head (E-bar for HATS, E otherwise)."""
        E = self.encode(windows)
        if self.spec.kind == "hats":
            return update_nodes(E, self.table, self.params, return_trace=trace)
        return (E, None) if trace else E

    def logits(self, windows: np.ndarray, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        X = self.represent(windows)
        X = ag.dropout(X, self.spec.dropout, rng, training)
        if self.spec.kind in ("gcn", "gcn-topk"):
            return gcn_logits(X, self.adjacency, self.params)
        return head_logits(X, self.params)

    def predict_proba(self, windows: np.ndarray) -> np.ndarray:
        with ag.no_grad():
            return ag.softmax(self.logits(windows)).data

    def attention(self, windows: np.ndarray) -> AttentionTrace:
        if self.spec.kind != "hats":
            raise UnsupportedModelError(f"attention weights exist only for HATS, not {self.spec.kind}")
        with ag.no_grad():
            _, tr = self.represent(windows, trace=True)
        return tr

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self.params[k].data = v.copy()


@dataclass
class IndexModel:
    """Shared GRU for constituents and index series, HATS update, mean pool, head."""

    spec: ModelSpec
    graph: RelationGraph
    indices: list  # list[IndexSpec]
    params: dict[str, Tensor]
    input_scale: float = 1.0
    combine: str = "sum"
    _table: NeighborTable | None = field(default=None, repr=False)

    @classmethod
    def create(cls, spec: ModelSpec, graph: RelationGraph, indices, seed: int,
               input_scale: float = 1.0, combine: str = "sum") -> "IndexModel":
        rng = np.random.default_rng(seed)
        params = dict(init_gru(rng, spec.hidden))
        if spec.kind == "hats":
            params.update(init_attention(rng, graph.n_relations, spec.hidden, spec.rel_dim))
        width = spec.hidden * (2 if combine == "concat" else 1)
        params.update(init_head(rng, width, prefix="index_head"))
        return cls(spec, graph, list(indices), params, input_scale, combine)

    @property
    def table(self) -> NeighborTable:
        if self._table is None:
            self._table = self.graph.neighbor_table()
        return self._table

    def logits(self, windows: np.ndarray, index_windows: np.ndarray, training: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        """``windows`` (..., n, L) and ``index_windows`` (..., K, L) -> logits (..., K, 3)."""
        E = encode_sequence(np.asarray(windows) * self.input_scale, self.params, "gru")
        if self.spec.kind == "hats":
            E = update_nodes(E, self.table, self.params)
        E = ag.dropout(E, self.spec.dropout, rng, training)
        g_own = encode_sequence(np.asarray(index_windows) * self.input_scale, self.params, "gru")
        reps = []
        for k, spec in enumerate(self.indices):
            g_pool = mean_pool(E, spec.members)
            reps.append(index_representation(g_pool, g_own[..., k, :], self.combine))
        G = ag.stack(reps, axis=-2)
        return head_logits(G, self.params, "index_head")

    def predict_proba(self, windows, index_windows) -> np.ndarray:
        with ag.no_grad():
            return ag.softmax(self.logits(windows, index_windows)).data

    snapshot = NodeModel.snapshot
    restore = NodeModel.restore


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: NodeModel, path: str | Path, meta: dict | None = None) -> None:
    spec = model.spec
    obj = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": {"kind": spec.kind, "encoder": spec.encoder, "hidden": spec.hidden, "rel_dim": spec.rel_dim,
                 "gcn_h1": spec.gcn_h1, "gcn_h2": spec.gcn_h2, "dropout": spec.dropout,
                 "relations": list(spec.relations) if spec.relations is not None else None},
        "input_scale": model.input_scale,
        "relations": list(model.graph.relations),
        "meta": meta or {},
        "params": {k: {"shape": list(p.shape), "data": p.data.ravel().tolist()}
                   for k, p in sorted(model.params.items())},
    }
    Path(path).write_text(json.dumps(obj) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path, graph: RelationGraph) -> tuple[NodeModel, dict]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a model checkpoint")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')}")
    if list(graph.relations) != obj["relations"]:
        raise ValueError("checkpoint was trained on a different relation set")
    s = obj["spec"]
    spec = ModelSpec(kind=s["kind"], encoder=s["encoder"], hidden=s["hidden"], rel_dim=s["rel_dim"],
                     gcn_h1=s["gcn_h1"], gcn_h2=s["gcn_h2"], dropout=s["dropout"],
                     relations=tuple(s["relations"]) if s["relations"] is not None else None)
    params = {k: ag.parameter(np.array(v["data"], dtype=np.float64).reshape(v["shape"]))
              for k, v in obj["params"].items()}
    return NodeModel(spec, graph, params, float(obj["input_scale"])), obj["meta"]
