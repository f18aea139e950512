import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hats.backtest import build_portfolio, daily_return, equity_curve, load_risk_free, run_backtest, sharpe
from hats.market import DOWN, NEUTRAL, UP

from . import oracles


def _probs(up, down):
    up, down = np.asarray(up, float), np.asarray(down, float)
    p = np.zeros((len(up), 3))
    p[:, UP], p[:, DOWN] = up, down
    p[:, NEUTRAL] = 1.0 - up - down
    return p


def test_one_long_one_short():
    lo, sh = build_portfolio(_probs([0.9, 0.1], [0.05, 0.8]), n=1, tickers=["A", "B"])
    assert (lo, sh) == ((0,), (1,))


def test_conflict_goes_to_larger_side_and_short_is_backfilled():
    # company 0 tops both lists; P(up) .6 > P(down) .35
    p = _probs([0.6, 0.3, 0.1, 0.05], [0.35, 0.1, 0.3, 0.2])
    lo, sh = build_portfolio(p, n=1)
    assert lo == (0,) and sh == (2,)


def test_small_universe_scales_n_down(caplog):
    lo, sh = build_portfolio(_probs([0.5, 0.4, 0.3], [0.1, 0.2, 0.3]), n=15)
    assert len(lo) == len(sh) == 1
    assert "smaller than" in caplog.text


def _random_probs(rng, m):
    return rng.dirichlet(np.ones(3), m)


@pytest.mark.parametrize("seed", range(3))
def test_large_universe_matches_sort_oracle(seed):
    rng = np.random.default_rng(seed)
    p = _random_probs(rng, 431)
    names = [f"T{i:03d}" for i in range(431)]
    lo, sh = build_portfolio(p, 15, names)
    ref = oracles.build_portfolio(p[:, UP], p[:, DOWN], 15, names)
    assert (sorted(lo), sorted(sh)) == ref
    assert len(lo) == len(sh) == 15 and not set(lo) & set(sh)


@settings(max_examples=80)
@given(st.integers(2, 40), st.integers(1, 8), st.integers(0, 100_000), st.booleans())
def test_portfolio_oracle_and_disjointness(m, n, seed, coarse):
    rng = np.random.default_rng(seed)
    p = _random_probs(rng, m)
    if coarse:  # force probability ties
        p = np.round(p, 1)
    names = [f"N{i:02d}" for i in range(m)]
    lo, sh = build_portfolio(p, n, names)
    k = min(n, m // 2)
    assert len(lo) == len(sh) == k and not set(lo) & set(sh)
    assert (sorted(lo), sorted(sh)) == oracles.build_portfolio(p[:, UP], p[:, DOWN], k, names)


def test_single_position_returns():
    prev, now = np.array([100.0, 50.0]), np.array([101.0, 50.0])
    assert daily_return([0], [], prev, now)[0] == pytest.approx(0.01, abs=1e-15)
    assert daily_return([], [0], prev, now)[0] == pytest.approx(-0.01, abs=1e-15)


def test_missing_price_drops_position():
    total, rate, dropped = daily_return([0, 1], [], np.array([100.0, np.nan]), np.array([102.0, 5.0]))
    assert dropped == (1,) and total == pytest.approx(0.02) and rate == pytest.approx(0.02)


def test_four_asset_two_day_ledger():
    close = np.array([[10.0, 20.0, 30.0, 40.0],
                      [11.0, 19.0, 30.0, 44.0],
                      [11.0, 20.9, 27.0, 44.0]])
    # day 1: long {3, 0}, short {1, 2}; day 2: long {1, 0}, short {2, 3}
    probs = {1: _probs([0.5, 0.1, 0.1, 0.8], [0.1, 0.6, 0.5, 0.1]),
             2: _probs([0.6, 0.7, 0.1, 0.2], [0.1, 0.1, 0.7, 0.6])}
    led = run_backtest(probs, close, n=2)
    assert [set(d.long) for d in led.days] == [{0, 3}, {0, 1}]
    for k, d in enumerate(led.days):
        total, rate = oracles.portfolio_returns(d.long, d.short, close[d.day - 1], close[d.day])
        assert abs(d.r_sum - total) < 1e-12 and abs(d.r_rate - rate) < 1e-12
    # by hand: day 1 = .1 + .1 + .05 - 0 = .25; day 2 = 0 + .1 + .1 - 0 = .2
    np.testing.assert_allclose(led.r_sum, [0.25, 0.2], atol=1e-12)
    np.testing.assert_allclose(led.r_rate, [0.0625, 0.05], atol=1e-12)


def test_negating_positions_negates_returns():
    rng = np.random.default_rng(1)
    prev, now = rng.uniform(10, 20, 12), rng.uniform(10, 20, 12)
    lo, sh = [0, 3, 5], [1, 2, 7]
    assert daily_return(sh, lo, prev, now)[0] == -daily_return(lo, sh, prev, now)[0]


def test_no_lookahead():
    rng = np.random.default_rng(2)
    close = rng.uniform(10, 20, (8, 40))
    probs = {t: _random_probs(rng, 40) for t in range(1, 8)}
    base = run_backtest(probs, close, 5)
    shuffled = dict(probs)
    order = rng.permutation(range(4, 8))
    for t, s in zip(range(4, 8), order):
        shuffled[t] = probs[int(s)]
    other = run_backtest(shuffled, close, 5)
    for a, b in zip(base.days[:3], other.days[:3]):
        assert (a.long, a.short, a.r_sum) == (b.long, b.short, b.r_sum)


def test_sharpe_cases():
    assert not sharpe([0.01] * 10).defined
    assert not sharpe([0.03, 0.03], risk_free=0.01).defined
    assert sharpe([0.01, -0.01] * 5).value == 0.0
    rng = np.random.default_rng(3)
    r = rng.normal(0.001, 0.01, 100)
    rf = rng.uniform(0, 1e-4, 100)
    assert abs(sharpe(r).value - oracles.sharpe(r)) < 1e-10
    assert abs(sharpe(r, rf).value - oracles.sharpe(r, rf)) < 1e-10
    with pytest.raises(ValueError):
        sharpe([0.1])


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_sharpe_scale_invariance(seed, c):
    x = np.random.default_rng(seed).normal(0.001, 0.01, 30)
    assert sharpe(c * x).value == pytest.approx(sharpe(x).value, rel=1e-9, abs=1e-12)


def test_equity_cases():
    assert equity_curve(np.zeros(5))[0].tolist() == [100.0] * 6
    np.testing.assert_allclose(equity_curve([0.1, -0.1])[0], [100, 110, 99], atol=1e-12)
    r = np.random.default_rng(4).normal(0, 0.02, 50)
    assert np.max(np.abs(equity_curve(r)[0] - oracles.equity(r))) < 1e-10
    curve, ruined = equity_curve([0.1, -1.5, 0.2])
    assert ruined and curve.tolist()[2:] == [0.0, 0.0]


def test_risk_free_file(tmp_path):
    (tmp_path / "rf.csv").write_text("date,annual_rate\n2020-01-02,0.0252\n")
    assert load_risk_free(tmp_path / "rf.csv") == {"2020-01-02": pytest.approx(1e-4)}
