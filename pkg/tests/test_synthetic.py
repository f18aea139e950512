import numpy as np
import pytest

from hats.synthetic import LAYOUTS, NOISE_PROPERTIES, SIGNAL_PROPERTY, generate


@pytest.mark.parametrize("layout", LAYOUTS)
def test_generated_market_shape_and_relations(layout):
    syn = generate(20, 120, 3, seed=1, layout=layout)
    assert syn.frame.close.shape == (120, 20)
    g = syn.graph()
    assert syn.signal_relation == SIGNAL_PROPERTY and SIGNAL_PROPERTY in g.relations
    assert len(syn.noise_relations) >= 1 and all(r in g.relations for r in syn.noise_relations)
    assert g.edges[SIGNAL_PROPERTY]


def test_deterministic_given_seed():
    a, b = generate(seed=5), generate(seed=5)
    assert np.array_equal(a.frame.close, b.frame.close) and a.store.triples == b.store.triples
    assert not np.array_equal(a.frame.close, generate(seed=6).frame.close)


def test_followers_repeat_leader_moves():
    syn = generate(20, 400, 1, seed=2, beta=0.9, layout="leaders", lead_scale=3.0)
    R = syn.frame.returns
    g = syn.graph()
    lead = set(syn.leaders)
    for i, j in g.edges[SIGNAL_PROPERTY]:
        leader, follower = (i, j) if i in lead else (j, i)
        assert leader in lead and follower not in lead
        c = np.corrcoef(R[2:-1, leader], R[3:, follower])[0, 1]
        assert c > 0.8
        assert np.std(R[2:, leader]) > 2 * np.std(R[2:, follower])


def test_noise_relations_carry_no_lead():
    syn = generate(20, 600, 3, seed=3)
    R = syn.frame.returns
    g = syn.graph()
    for r in syn.noise_relations:
        pairs = [(i, j) for i, j in g.edges[r] if (i, j) not in g.edges[SIGNAL_PROPERTY]]
        cs = [np.corrcoef(R[2:-1, i], R[3:, j])[0, 1] for i, j in pairs[:20]]
        assert abs(np.mean(cs)) < 0.2


def test_write_round_trip(tmp_path):
    from hats.graph import build_metapaths, load_companies, load_triples
    from hats.market import load_prices
    syn = generate(12, 80, 2, seed=4)
    paths = syn.write(tmp_path)
    fr = load_prices(paths["prices"])
    assert np.array_equal(fr.close, syn.frame.close)
    store = load_triples(paths["triples"], load_companies(paths["companies"]), fr.tickers)
    g = build_metapaths(store, fr.tickers)
    assert g.relations == syn.graph().relations


def test_bad_arguments():
    with pytest.raises(ValueError):
        generate(layout="ring")
    with pytest.raises(ValueError):
        generate(n_noise=len(NOISE_PROPERTIES) + 1)
