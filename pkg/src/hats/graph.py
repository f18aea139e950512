"""Company relation graph built from knowledge triples via meta-paths."""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

log = logging.getLogger(__name__)

# Wikidata properties used to form company relations
PROPERTY_NAMES = {
    "P17": "Country", "P31": "Instance of", "P112": "Founded by", "P121": "Item operated",
    "P127": "Owned by", "P131": "Located in the administrative territorial entity",
    "P138": "Named after", "P155": "Follows", "P156": "Followed by",
    "P159": "Headquarters location", "P166": "Award received",
    "P169": "Chief executive officer", "P176": "Manufacturer", "P355": "Subsidiary",
    "P361": "Part of", "P400": "Platform", "P414": "Stock Exchange", "P452": "Industry",
    "P463": "Member of", "P488": "Chairperson", "P495": "Country of origin",
    "P625": "Coordinate location", "P740": "Location of formation",
    "P749": "Parent organization", "P793": "Significant event",
    "P1056": "Product or material produced", "P1343": "Described by source",
    "P1344": "Participant of", "P1454": "Legal form", "P1552": "Has quality",
    "P1830": "Owner of", "P1889": "Different from", "P3320": "Board member",
    "P5009": "Complies with", "P6379": "Has works in the collection",
}


class GraphError(KeyError):
    pass


def relation_name(code: str) -> str:
    """Human-readable name, e.g. ``P452-P1454`` -> ``Industry-Legal form``."""
    return "-".join(PROPERTY_NAMES.get(p, p) for p in code.split("-"))


@dataclass
class TripleStore:
    triples: list[tuple[str, str, str]] = field(default_factory=list)
    companies: dict[str, str] = field(default_factory=dict)  # entity id -> ticker
    duplicates: int = 0

    def is_company(self, entity: str) -> bool:
        return entity in self.companies


def load_companies(path: str | Path) -> dict[str, str]:
    """``ticker,entity_id[,industry]`` CSV -> {entity_id: ticker}."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.DictReader(fh), start=2):
            if not rec.get("ticker") or not rec.get("entity_id"):
                raise ValueError(f"line {lineno}: ticker and entity_id required")
            out[rec["entity_id"].strip()] = rec["ticker"].strip()
    return out


def load_industries(path: str | Path) -> dict[str, str]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out[rec["ticker"].strip()] = (rec.get("industry") or "unknown").strip()
    return out


def load_triples(path: str | Path, companies: Mapping[str, str] | None = None,
                 known_tickers: Iterable[str] | None = None) -> TripleStore:
    """Read ``subject<TAB>property<TAB>object`` rows; duplicates are dropped and counted.

    Company entities whose ticker is not in ``known_tickers`` are treated as
    unmapped: a warning is logged and their triples are skipped.
    """
    companies = dict(companies or {})
    if known_tickers is not None:
        known = set(known_tickers)
        unknown = {e: t for e, t in companies.items() if t not in known}
        for e, t in sorted(unknown.items()):
            log.warning("company %s (%s) has no price data; skipping its triples", t, e)
    else:
        unknown = {}
    seen = set()
    store = TripleStore(companies={e: t for e, t in companies.items() if e not in unknown})
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                raise ValueError(f"line {lineno}: expected subject<TAB>property<TAB>object")
            s, p, o = (x.strip() for x in parts)
            if s in unknown or o in unknown:
                continue
            if (s, p, o) in seen:
                store.duplicates += 1
                continue
            seen.add((s, p, o))
            store.triples.append((s, p, o))
    if store.duplicates:
        log.info("dropped %d duplicate triples", store.duplicates)
    return store


@dataclass
class RelationGraph:
    """Per-type undirected neighbor sets over company indices."""

    tickers: tuple[str, ...]
    relations: tuple[str, ...]
    edges: dict[str, frozenset[tuple[int, int]]]  # (i, j) with i < j

    def __post_init__(self):
        n = len(self.tickers)
        self._nbrs: dict[str, list[list[int]]] = {}
        for code in self.relations:
            lists: list[list[int]] = [[] for _ in range(n)]
            for i, j in self.edges[code]:
                if i == j or not (0 <= i < n and 0 <= j < n):
                    raise ValueError(f"bad edge {(i, j)} in relation {code}")
                lists[i].append(j)
                lists[j].append(i)
            self._nbrs[code] = [sorted(x) for x in lists]

    @property
    def n_nodes(self) -> int:
        return len(self.tickers)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def neighbors(self, i: int, relation: str | int) -> list[int]:
        code = self.relations[relation] if isinstance(relation, (int, np.integer)) else relation
        if code not in self._nbrs:
            raise GraphError(f"unknown relation {relation!r}")
        if not 0 <= i < self.n_nodes:
            raise GraphError(f"node {i} out of range")
        return list(self._nbrs[code][i])

    def adjacency(self, relation: str) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes))
        for i, j in self.edges[relation]:
            a[i, j] = a[j, i] = 1.0
        return a

    def subgraph(self, relations: Iterable[str]) -> "RelationGraph":
        rel = tuple(r for r in self.relations if r in set(relations))
        return RelationGraph(self.tickers, rel, {r: self.edges[r] for r in rel})

    def neighbor_table(self) -> "NeighborTable":
        return NeighborTable.from_graph(self)

    def to_json(self) -> dict:
        return {"tickers": list(self.tickers),
                "relations": [{"code": r, "name": relation_name(r), "edge_count": len(self.edges[r]),
                               "edges": [list(e) for e in sorted(self.edges[r])]}
                              for r in self.relations]}

    @classmethod
    def from_json(cls, obj: dict) -> "RelationGraph":
        rels = tuple(r["code"] for r in obj["relations"])
        edges = {r["code"]: frozenset(tuple(e) for e in r["edges"]) for r in obj["relations"]}
        return cls(tuple(obj["tickers"]), rels, edges)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RelationGraph":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class NeighborTable:
    """Padded neighbor index arrays, one (n, K_m) block per relation."""

    index: tuple[np.ndarray, ...]
    mask: tuple[np.ndarray, ...]
    active: np.ndarray  # (n, M) bool: node has >= 1 neighbor in relation m

    @classmethod
    def from_graph(cls, graph: RelationGraph) -> "NeighborTable":
        n = graph.n_nodes
        idx, msk = [], []
        active = np.zeros((n, graph.n_relations), dtype=bool)
        for m, code in enumerate(graph.relations):
            lists = [graph.neighbors(i, code) for i in range(n)]
            k = max(1, max((len(x) for x in lists), default=0))
            a = np.zeros((n, k), dtype=np.intp)
            b = np.zeros((n, k), dtype=bool)
            for i, x in enumerate(lists):
                a[i, :len(x)] = x
                b[i, :len(x)] = True
                active[i, m] = bool(x)
            idx.append(a)
            msk.append(b)
        return cls(tuple(idx), tuple(msk), active)


def build_metapaths(store: TripleStore, tickers: Iterable[str], max_hops: int = 2) -> RelationGraph:
    """Derive company relation types from triples.

    A triple linking two companies gives a one-hop type named by its property.
    Two companies that both touch the same non-company entity x, company i via
    property a and company j via property b (in either triple direction), get an
    edge of type ``a-b``; the same pair also appears under ``b-a``.  Longer
    chains are not followed.  Types without edges are omitted.
    """
    tickers = tuple(tickers)
    if not tickers:
        raise ValueError("company set is empty")
    pos = {t: k for k, t in enumerate(tickers)}

    def company_index(entity: str) -> int | None:
        t = store.companies.get(entity)
        return None if t is None else pos.get(t)

    edges: dict[str, set[tuple[int, int]]] = defaultdict(set)
    incident: dict[str, set[tuple[int, str]]] = defaultdict(set)  # entity -> {(company, prop)}
    for s, p, o in store.triples:
        ci, cj = company_index(s), company_index(o)
        if ci is not None and cj is not None:
            if ci != cj:
                edges[p].add((min(ci, cj), max(ci, cj)))
        elif ci is not None and not store.is_company(o):
            incident[o].add((ci, p))
        elif cj is not None and not store.is_company(s):
            incident[s].add((cj, p))
    if max_hops >= 2:
        for x in sorted(incident):
            members = sorted(incident[x])
            for a_i, a_p in members:
                for b_i, b_p in members:
                    if a_i == b_i:
                        continue
                    edges[f"{a_p}-{b_p}"].add((min(a_i, b_i), max(a_i, b_i)))
    relations = tuple(sorted(k for k, v in edges.items() if v))
    log.info("built %d relation types over %d companies", len(relations), len(tickers))
    return RelationGraph(tickers, relations, {r: frozenset(edges[r]) for r in relations})


@dataclass(frozen=True)
class NormalizedAdjacency:
    matrix: np.ndarray


def to_adjacency(graph: RelationGraph, relations: Iterable[str] | None = None) -> NormalizedAdjacency:
    """D^-1/2 (A + I) D^-1/2 over the union of the chosen relations' edges."""
    rel = list(graph.relations if relations is None else relations)
    if not rel and relations is not None:
        raise ValueError("relation subset is empty")
    n = graph.n_nodes
    a = np.zeros((n, n))
    for r in rel:
        if r not in graph.edges:
            raise GraphError(f"unknown relation {r!r}")
        for i, j in graph.edges[r]:
            a[i, j] = a[j, i] = 1.0
    return NormalizedAdjacency(normalize_adjacency(a))


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    at = a + np.eye(a.shape[0])
    d = 1.0 / np.sqrt(at.sum(axis=1))
    out = at * d[:, None] * d[None, :]
    return (out + out.T) / 2


def select_top_k(scores: Mapping[str, float], k: int = 20) -> list[str]:
    """Best ``k`` relations by score; equal scores fall back to code order."""
    if not scores:
        raise ValueError("no relation scores")
    if k > len(scores):
        log.warning("asked for top %d of only %d relations; returning all", k, len(scores))
    ranked = sorted(scores, key=lambda c: (-scores[c], c))
    return ranked[:k]
