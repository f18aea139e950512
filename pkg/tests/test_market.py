import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from hats.market import (DOWN, NEUTRAL, UP, DomainError, IngestionError, LabelRule, assign_labels,
                         change_rates, class_counts, fit_thresholds, load_prices, prices_from_returns,
                         save_prices, split_phases, usable_days, window_matrix, windows_for, MarketFrame)


def _write(path, rows):
    path.write_text("date,ticker,close\n" + "".join(f"{d},{t},{c}\n" for d, t, c in rows))
    return path


def test_complete_file_loads(tmp_path):
    rows = [(f"2020-01-0{d}", t, 10.0 * d + k) for d in (1, 2, 3) for k, t in enumerate("AB")]
    fr = load_prices(_write(tmp_path / "p.csv", rows))
    assert fr.close.shape == (3, 2)
    assert fr.tickers == ("A", "B")
    assert fr.close[2, 1] == 31.0
    assert not fr.filled.any()


def test_missing_middle_day_is_forward_filled(tmp_path):
    rows = [("2020-01-01", "A", 10), ("2020-01-02", "A", 11), ("2020-01-03", "A", 12),
            ("2020-01-01", "B", 5), ("2020-01-03", "B", 7)]
    fr = load_prices(_write(tmp_path / "p.csv", rows), max_missing=0.5)
    assert fr.close[:, 1].tolist() == [5.0, 5.0, 7.0]
    assert fr.filled[:, 1].tolist() == [False, True, False]


def test_sparse_ticker_dropped_and_reported(tmp_path):
    rows = [(f"2020-01-{d:02d}", "A", 10 + d) for d in range(1, 21)] + [("2020-01-01", "B", 3)]
    rows += [(f"2020-01-{d:02d}", "B", 3) for d in range(2, 5)]
    fr = load_prices(_write(tmp_path / "p.csv", rows))
    assert fr.tickers == ("A",) and fr.dropped == ("B",)


def test_intersect_policy(tmp_path):
    rows = [("2020-01-01", "A", 10), ("2020-01-02", "A", 11), ("2020-01-02", "B", 5), ("2020-01-03", "B", 6)]
    fr = load_prices(_write(tmp_path / "p.csv", rows), policy="intersect")
    assert fr.dates == ("2020-01-02",)
    with pytest.raises(IngestionError):
        load_prices(_write(tmp_path / "q.csv", [("2020-01-01", "A", 1), ("2020-01-02", "B", 1)]),
                    policy="intersect")


@pytest.mark.parametrize("line,msg", [("2020-13-01,A,1", "line 3"), ("2020-01-02,A,abc", "line 3"),
                                      ("2020-01-02,A,-4", "line 3"), ("2020-01-02,A", "line 3")])
def test_bad_rows_report_line_number(tmp_path, line, msg):
    p = tmp_path / "p.csv"
    p.write_text(f"date,ticker,close\n2020-01-01,A,1\n{line}\n")
    with pytest.raises(IngestionError, match=msg):
        load_prices(p)


def test_large_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    n, days = 431, 1174
    close = prices_from_returns(np.vstack([np.zeros(n), rng.normal(0, 0.02, (days - 1, n))]))
    start = np.datetime64("2013-02-08")
    dates = tuple(str(start + i) for i in range(days))
    fr = MarketFrame(tuple(f"T{i:03d}" for i in range(n)), dates, close)
    save_prices(fr, tmp_path / "p.csv")
    back = load_prices(tmp_path / "p.csv")
    assert back.tickers == fr.tickers and back.dates == fr.dates
    assert np.array_equal(back.close, fr.close)


def test_change_rate_examples():
    assert change_rates(np.array([[100.0], [110.0]]))[1, 0] == pytest.approx(0.10, abs=1e-15)
    assert not change_rates(np.full((4, 2), 7.0))[1:].any()
    r = change_rates(np.array([[100.0], [110.0], [99.0]]))
    assert np.isnan(r[0, 0])
    np.testing.assert_allclose(r[1:, 0], [0.10, -0.10], atol=1e-15)
    with pytest.raises(DomainError):
        change_rates(np.array([[1.0], [0.0]]))
    with pytest.raises(DomainError):
        change_rates(np.array([[1.0]]))


@settings(max_examples=40)
@given(hnp.arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 5)),
                  elements=st.floats(-0.5, 0.5)))
def test_prices_round_trip_returns(r):
    r[0] = 0.0
    back = change_rates(prices_from_returns(r))
    assert np.max(np.abs(back[1:] - r[1:])) < 1e-12


# ---------------------------------------------------------------- thresholds & labels

def test_quantile_thresholds_on_uniform_grid():
    r = np.repeat(np.array([-0.02, -0.01, 0.0, 0.01, 0.02]), 20)
    rule = fit_thresholds(r, 0.2)
    # oracle: linear-interpolated empirical quantiles at 0.4 and 0.6
    s = np.sort(r)
    def q(p):
        h = (len(s) - 1) * p
        lo = int(np.floor(h))
        return s[lo] + (h - lo) * (s[min(lo + 1, len(s) - 1)] - s[lo])
    assert rule.down_threshold == pytest.approx(q(0.4), abs=1e-15)
    assert rule.up_threshold == pytest.approx(q(0.6), abs=1e-15)
    assert -0.01 <= rule.down_threshold < 0.0 < rule.up_threshold <= 0.01


def test_zero_neutral_fraction_collapses_to_median():
    r = np.random.default_rng(1).normal(size=101)
    rule = fit_thresholds(r, 0.0)
    assert rule.down_threshold == rule.up_threshold == pytest.approx(np.median(r))
    lab = assign_labels(r, rule)
    assert NEUTRAL not in lab


def test_degenerate_and_passthrough():
    with pytest.raises(ValueError, match="explicit thresholds"):
        fit_thresholds(np.zeros(10))
    rule = LabelRule(-0.01, 0.01)
    assert (rule.down_threshold, rule.up_threshold) == (-0.01, 0.01)


def test_label_examples_and_boundaries():
    rule = LabelRule(-0.01, 0.01)
    assert assign_labels(np.array([0.05, 0.0, -0.01, 0.01, np.nan]), rule).tolist() == [UP, NEUTRAL, DOWN, UP, -1]
    assert rule.label(-0.01) == DOWN and rule.label(0.0) == NEUTRAL
    assert class_counts(np.array([0, 0, 1, 2])) == {"up": 2, "neutral": 1, "down": 1}


@settings(max_examples=60)
@given(hnp.arrays(np.float64, st.integers(3, 60), elements=st.floats(-0.2, 0.2)),
       st.floats(0.0, 0.9))
def test_labels_satisfy_their_inequality(r, nf):
    if np.all(r == r[0]):
        return
    rule = fit_thresholds(r, nf)
    for v, lab in zip(r, assign_labels(r, rule)):
        if lab == UP:
            assert v >= rule.up_threshold
        elif lab == DOWN:
            assert v <= rule.down_threshold
        else:
            assert rule.down_threshold < v < rule.up_threshold


# ---------------------------------------------------------------- phases & windows

def test_single_phase():
    (p,) = split_phases(400, stride=400)
    assert (p.train, p.eval, p.test) == (range(0, 250), range(250, 300), range(300, 400))


def test_full_calendar_gives_eight_phases():
    phases = split_phases(1174, stride=100)
    assert len(phases) == (1174 - 400) // 100 + 1 == 8
    assert all(len(p.train) == 250 and len(p.eval) == 50 and len(p.test) == 100 for p in phases)
    assert phases[-1].test.stop <= 1174


def test_large_stride_and_short_calendar():
    assert len(split_phases(700, stride=500)) == 1
    with pytest.raises(ValueError, match="400"):
        split_phases(399)


@settings(max_examples=60)
@given(st.integers(3, 40), st.integers(1, 10), st.integers(1, 20), st.integers(1, 30), st.integers(0, 200))
def test_phases_never_leak(tr, ev, te, stride, extra):
    for p in split_phases(tr + ev + te + extra, tr, ev, te, stride):
        assert max(p.train) < min(p.eval) and max(p.eval) < min(p.test)
        assert p.eval.stop == p.test.start


def _frame(days=60, n=3):
    rng = np.random.default_rng(0)
    close = prices_from_returns(rng.normal(0, 0.01, (days, n)))
    dates = tuple(str(np.datetime64("2020-01-01") + i) for i in range(days))
    return MarketFrame(tuple(f"T{i}" for i in range(n)), dates, close)


def test_window_indices():
    fr = _frame()
    ws = windows_for(fr, 51)
    assert [w.company for w in ws] == ["T0", "T1", "T2"]
    assert np.array_equal(ws[1].values, fr.returns[1:51, 1])
    with pytest.raises(IndexError):
        windows_for(fr, 50)
    w52 = windows_for(fr, 52)
    assert np.array_equal(ws[0].values[1:], w52[0].values[:-1])
    assert len(ws[0].values) == 50


def test_window_matrix_and_usable_days():
    fr = _frame()
    W = window_matrix(fr.returns, [51, 55], 50)
    assert W.shape == (2, 3, 50)
    assert np.array_equal(W[1, 2], fr.returns[5:55, 2])
    assert usable_days(range(0, 60), 50) == list(range(51, 60))
