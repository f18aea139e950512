import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hats import autograd as ag
from hats.autograd import ContractError, ShapeError
from hats.heads import (IndexSpec, index_classify_and_loss, index_representation, init_head, mean_pool,
                        node_classify, node_loss)

from . import oracles


def _zero_head(f, prefix="head"):
    return {f"{prefix}.W": ag.parameter(np.zeros((f, 3))), f"{prefix}.b": ag.parameter(np.zeros(3))}


def test_zero_weights_give_uniform_rows():
    Y = node_classify(ag.tensor(np.random.default_rng(0).normal(size=(4, 5))), _zero_head(5)).data
    np.testing.assert_allclose(Y, 1 / 3, atol=1e-15)


def test_large_logit_dominates():
    p = {"head.W": ag.parameter(np.eye(3)), "head.b": ag.parameter(np.zeros(3))}
    assert node_classify(ag.tensor([[10.0, 0.0, 0.0]]), p).data[0, 0] == pytest.approx(0.9999092, abs=1e-7)


def test_node_classify_matches_loop_oracle():
    rng = np.random.default_rng(1)
    E = rng.normal(size=(6, 4))
    p = init_head(rng, 4)
    W, b = p["head.W"].data, p["head.b"].data
    got = node_classify(ag.tensor(E), p).data
    for i in range(6):
        logits = [math.fsum(E[i, k] * W[k, c] for k in range(4)) + b[c] for c in range(3)]
        m = max(logits)
        ex = [math.exp(v - m) for v in logits]
        assert np.max(np.abs(got[i] - np.array(ex) / sum(ex))) < 1e-12


def test_loss_cases(caplog):
    assert node_loss(ag.tensor(np.eye(3)), [0, 1, 2]).item() == 0.0
    n = 7
    assert node_loss(ag.tensor(np.full((n, 3), 1 / 3)), [0] * n).item() == pytest.approx(n * math.log(3), abs=1e-12)
    assert node_loss(ag.tensor(np.full((n, 3), 1 / 3)), [0] * n, "mean").item() == pytest.approx(math.log(3))
    rng = np.random.default_rng(2)
    P = rng.dirichlet(np.ones(3), 9)
    y = rng.integers(0, 3, 9)
    ref = -math.fsum(math.log(P[i, y[i]]) for i in range(9))
    assert abs(node_loss(ag.tensor(P), y).item() - ref) < 1e-12
    clamped = node_loss(ag.tensor([[1.0, 0.0, 0.0]]), [1]).item()
    assert clamped == pytest.approx(-math.log(1e-12)) and "clamping" in caplog.text
    with pytest.raises(ShapeError):
        node_loss(ag.tensor(np.eye(3)), [0, 1])


def test_pooling_cases():
    rng = np.random.default_rng(3)
    row = rng.normal(size=4)
    assert np.allclose(mean_pool(ag.tensor(np.tile(row, (5, 1))), range(5)).data, row, atol=1e-15)
    a, b = rng.normal(size=4), rng.normal(size=4)
    np.testing.assert_allclose(mean_pool(ag.tensor(np.stack([a, b])), [0, 1]).data, (a + b) / 2, atol=1e-15)
    E = rng.normal(size=(30, 4))
    members = sorted(rng.choice(30, 20, replace=False))
    assert np.max(np.abs(mean_pool(ag.tensor(E), members).data - oracles.mean_pool(E, members))) < 1e-12
    with pytest.raises(ContractError):
        mean_pool(ag.tensor(E), [])


@settings(max_examples=40)
@given(st.integers(0, 10_000))
def test_pooling_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    E = rng.normal(size=(25, 3))
    members = list(rng.choice(25, 20, replace=False))
    a = mean_pool(ag.tensor(E), members).data
    b = mean_pool(ag.tensor(E), list(rng.permutation(members))).data
    assert np.max(np.abs(a - b)) <= 1e-12


def test_index_representation():
    rng = np.random.default_rng(4)
    gp, ge = rng.normal(size=5), rng.normal(size=5)
    assert np.array_equal(index_representation(gp, np.zeros(5)).data, gp)
    assert not index_representation(gp, -gp).data.any()
    assert np.array_equal(index_representation(gp, ge).data, gp + ge)
    assert index_representation(gp, ge, "concat").shape == (10,)
    with pytest.raises(ShapeError):
        index_representation(gp, np.zeros(4))


def test_index_head_cases():
    g = ag.tensor(np.random.default_rng(5).normal(size=4))
    Y, loss = index_classify_and_loss(g, _zero_head(4, "index_head"), 2)
    np.testing.assert_allclose(Y.data, 1 / 3, atol=1e-15)
    assert loss.item() == pytest.approx(math.log(3), abs=1e-12)
    p = {"index_head.W": ag.parameter(np.zeros((4, 3))), "index_head.b": ag.parameter([0.0, 0.0, 800.0])}
    assert index_classify_and_loss(g, p, 2)[1].item() == 0.0


def test_index_spec_needs_twenty_members():
    IndexSpec("S5UTIL", tuple(range(20)))
    with pytest.raises(ContractError):
        IndexSpec("S5UTIL", tuple(range(19)))


def test_loss_descends_under_gradient_steps():
    rng = np.random.default_rng(6)
    E = ag.tensor(rng.normal(size=(8, 4)))
    y = rng.integers(0, 3, 8)
    p = init_head(rng, 4)
    for _ in range(10):
        before = node_loss(node_classify(E, p), y)
        g = ag.grad(before, p)
        for k in p:
            p[k].data -= 1e-3 * g[k]
        assert node_loss(node_classify(E, p), y).item() < before.item()


def test_head_and_pool_gradients():
    rng = np.random.default_rng(7)
    p = init_head(rng, 4)
    E = ag.parameter(rng.normal(size=(21, 4)))
    labels = rng.integers(0, 3, 21)
    err = ag.finite_diff_check(lambda: node_loss(node_classify(E, p), labels), {**p, "E": E})
    assert err < 1e-4
    q = init_head(rng, 4, prefix="index_head")
    err = ag.finite_diff_check(lambda: index_classify_and_loss(
        index_representation(mean_pool(E, range(21)), E[0]), q, 1)[1], {**q, "E": E})
    assert err < 1e-4
