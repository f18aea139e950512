import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hats.graph import (GraphError, RelationGraph, TripleStore, build_metapaths, load_triples,
                        normalize_adjacency, relation_name, select_top_k, to_adjacency)

from . import oracles

# per-relation F1 of the best and worst ten relation types reported for phase 4
TABLE1 = {
    "Industry-Legal form": 0.3276, "Industry-Product or material produced": 0.3251,
    "Parent organization-Owner of": 0.325, "Owned by-Subsidiary": 0.3247, "Parent organization": 0.3247,
    "Founded by-Founded by": 0.3245, "Follows": 0.3244, "Complies with-Complies with": 0.3242,
    "Owner of-Parent organization": 0.3241, "Subsidiary-Owner of": 0.3241,
    "Legal form-Instance of": 0.311, "Instance of-Legal form": 0.3082,
    "Location of formation-Country": 0.307, "Country-Location of formation": 0.3053,
    "Stock Exchange": 0.2952, "Country of origin-Country": 0.2948, "Country-Country of origin": 0.2886,
    "Country-Country of origin (2)": 0.2851, "Instance of-Instance of": 0.2748,
    "Stock Exchange-Stock Exchange": 0.2665,
}


def _tsv(path, rows):
    path.write_text("".join("\t".join(r) + "\n" for r in rows))
    return path


def test_single_triple(tmp_path):
    st_ = load_triples(_tsv(tmp_path / "t.tsv", [("Apple", "P112", "SteveJobs")]))
    assert st_.triples == [("Apple", "P112", "SteveJobs")]


def test_empty_file(tmp_path):
    (tmp_path / "t.tsv").write_text("")
    assert load_triples(tmp_path / "t.tsv").triples == []


def test_duplicates_counted(tmp_path):
    st_ = load_triples(_tsv(tmp_path / "t.tsv", [("A", "P17", "US")] * 3 + [("B", "P17", "US")]))
    assert len(st_.triples) == 2 and st_.duplicates == 2


def test_malformed_row_line_number(tmp_path):
    (tmp_path / "t.tsv").write_text("A\tP17\tUS\nbroken line\n")
    with pytest.raises(ValueError, match="line 2"):
        load_triples(tmp_path / "t.tsv")


def test_unmapped_company_skipped(tmp_path, caplog):
    p = _tsv(tmp_path / "t.tsv", [("Q1", "P17", "US"), ("Q9", "P17", "US")])
    st_ = load_triples(p, {"Q1": "AAPL", "Q9": "GONE"}, known_tickers=["AAPL"])
    assert st_.triples == [("Q1", "P17", "US")]
    assert "GONE" in caplog.text


def _store(triples, companies):
    return TripleStore(list(triples), dict(companies))


def test_shared_founder_gives_two_hop_edge():
    st_ = _store([("Apple", "P112", "Jobs"), ("Google", "P3320", "Jobs")], {"Apple": "AAPL", "Google": "GOOG"})
    g = build_metapaths(st_, ["AAPL", "GOOG"])
    assert set(g.relations) == {"P112-P3320", "P3320-P112"}
    assert g.neighbors(0, "P112-P3320") == [1] and g.neighbors(1, "P3320-P112") == [0]
    assert relation_name("P112-P3320") == "Founded by-Board member"


def test_direct_subsidiary_edge():
    g = build_metapaths(_store([("Parent", "P355", "Sub")], {"Parent": "PAR", "Sub": "SUB"}), ["PAR", "SUB"])
    assert g.relations == ("P355",)
    assert g.neighbors(0, "P355") == [1]


def test_three_hop_chain_gives_nothing():
    st_ = _store([("A", "P127", "X"), ("X", "P361", "Y"), ("B", "P127", "Y")], {"A": "A", "B": "B"})
    g = build_metapaths(st_, ["A", "B"])
    assert all(not g.neighbors(0, r) for r in g.relations)
    assert g.relations == ()


def _random_store(seed, n=6, n_ent=4, n_trip=20):
    rng = np.random.default_rng(seed)
    props = ["P17", "P452", "P749", "P127"]
    comps = {f"C{i}": f"T{i}" for i in range(n)}
    trip = []
    for _ in range(n_trip):
        s = f"C{rng.integers(n)}"
        o = f"C{rng.integers(n)}" if rng.random() < 0.2 else f"X{rng.integers(n_ent)}"
        p = props[rng.integers(len(props))]
        trip.append((o, p, s) if rng.random() < 0.3 else (s, p, o))
    return _store(dict.fromkeys(trip), comps), [f"T{i}" for i in range(n)]


@settings(max_examples=40)
@given(st.integers(0, 10_000))
def test_metapath_edges_are_witnessed_and_paired(seed):
    store, tickers = _random_store(seed)
    g = build_metapaths(store, tickers)
    touch = {}
    for s, p, o in store.triples:
        for c, x in ((s, o), (o, s)):
            if c in store.companies and x not in store.companies:
                touch.setdefault(x, set()).add((int(c[1:]), p))
    for r in g.relations:
        for i, j in g.edges[r]:
            assert i != j
            if "-" in r:
                a, b = r.split("-")
                assert any(((i, a) in t and (j, b) in t) or ((j, a) in t and (i, b) in t) for t in touch.values())
                assert (i, j) in g.edges[f"{b}-{a}"]
    again = build_metapaths(store, tickers)
    assert again.relations == g.relations and again.edges == g.edges


def test_neighbors_star_isolated_and_errors():
    g = RelationGraph(("a", "b", "c", "d", "e"), ("r",), {"r": frozenset({(0, 1), (0, 2), (0, 3)})})
    assert g.neighbors(0, "r") == [1, 2, 3]
    assert g.neighbors(4, "r") == []
    with pytest.raises(GraphError):
        g.neighbors(0, "missing")


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_neighbors_match_adjacency_rows(seed):
    rng = np.random.default_rng(seed)
    A = np.triu(rng.random((5, 5)) < 0.4, 1)
    A = A | A.T
    edges = frozenset((i, j) for i in range(5) for j in range(i + 1, 5) if A[i, j])
    g = RelationGraph(tuple("abcde"), ("r",), {"r": edges})
    for i in range(5):
        assert g.neighbors(i, 0) == [j for j in range(5) if A[i, j]]


def test_adjacency_examples():
    g = RelationGraph(("a", "b"), ("r",), {"r": frozenset({(0, 1)})})
    np.testing.assert_allclose(to_adjacency(g).matrix, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
    empty = RelationGraph(("a", "b", "c"), (), {})
    assert np.array_equal(to_adjacency(empty).matrix, np.eye(3))
    with pytest.raises(ValueError):
        to_adjacency(g, [])


def test_six_node_adjacency_matches_oracle():
    edges = [(0, 1), (1, 2), (2, 3), (0, 3), (4, 5), (1, 4)]
    g = RelationGraph(tuple("abcdef"), ("p", "q"), {"p": frozenset(edges[:3]), "q": frozenset(edges[3:])})
    got = to_adjacency(g, ["p", "q"]).matrix
    assert np.max(np.abs(got - oracles.normalized_adjacency(6, edges))) < 1e-12


@settings(max_examples=40)
@given(st.integers(1, 9), st.integers(0, 10_000))
def test_normalization_symmetry_and_regular_rows(n, seed):
    rng = np.random.default_rng(seed)
    a = np.triu(rng.random((n, n)) < 0.5, 1).astype(float)
    a = a + a.T
    ah = normalize_adjacency(a)
    assert np.max(np.abs(ah - ah.T)) <= 1e-15
    assert np.all(ah >= 0)
    ring = np.roll(np.eye(n), 1, axis=1) + np.roll(np.eye(n), -1, axis=1) if n > 2 else np.zeros((n, n))
    np.testing.assert_allclose(normalize_adjacency(np.minimum(ring, 1)).sum(axis=1), 1.0, atol=1e-12)


def test_top_k_on_reported_relation_scores():
    top = select_top_k(TABLE1, 20)
    assert top[0] == "Industry-Legal form"
    for k in range(1, 20):
        assert "Stock Exchange-Stock Exchange" not in select_top_k(TABLE1, k)
    assert select_top_k(TABLE1, 70)[-1] == "Stock Exchange-Stock Exchange"


def test_top_k_ties_and_overflow(caplog):
    assert select_top_k({"P31": 0.5, "P17": 0.5, "P1": 0.1}, 1) == ["P17"]
    assert select_top_k({"a": 1.0}, 5) == ["a"]
    assert "only 1" in caplog.text


def test_graph_json_round_trip(tmp_path):
    g = RelationGraph(tuple("abc"), ("x", "y"), {"x": frozenset({(0, 1)}), "y": frozenset({(1, 2), (0, 2)})})
    g.save(tmp_path / "g.json")
    back = RelationGraph.load(tmp_path / "g.json")
    assert back.relations == g.relations and back.edges == g.edges
