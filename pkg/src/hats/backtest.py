"""Neutralized long-short portfolio, daily returns, Sharpe ratio, equity curve."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .market import DOWN, UP

log = logging.getLogger(__name__)

TRADING_DAYS = 252


@dataclass(frozen=True)
class DayBook:
    day: int
    long: tuple[int, ...]
    short: tuple[int, ...]
    r_sum: float
    r_rate: float
    dropped: tuple[int, ...] = ()


@dataclass
class PortfolioLedger:
    days: list[DayBook] = field(default_factory=list)

    @property
    def r_sum(self) -> np.ndarray:
        return np.array([d.r_sum for d in self.days])

    @property
    def r_rate(self) -> np.ndarray:
        return np.array([d.r_rate for d in self.days])


def build_portfolio(probs: np.ndarray, n: int = 15, tickers=None) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Top-n by P(up) go long, top-n by P(down) go short.

    A company in both candidate lists stays on the side with the larger
    probability (long on a tie) and the other side takes its next candidate.
    Equal probabilities are ordered by ticker.
    """
    probs = np.asarray(probs, dtype=np.float64)
    m = probs.shape[0]
    names = list(tickers) if tickers is not None else [f"{i:09d}" for i in range(m)]
    if m < 2 * n:
        new_n = m // 2
        log.warning("universe of %d companies is smaller than 2x%d; using n=%d", m, n, new_n)
        n = new_n
    if n == 0:
        return (), ()
    up, down = probs[:, UP], probs[:, DOWN]
    long_rank = sorted(range(m), key=lambda i: (-up[i], names[i]))
    short_rank = sorted(range(m), key=lambda i: (-down[i], names[i]))
    longs, shorts = set(long_rank[:n]), set(short_rank[:n])
    for c in sorted(longs & shorts, key=lambda i: names[i]):
        if up[c] >= down[c]:
            shorts.discard(c)
        else:
            longs.discard(c)
    for side, rank, other in ((longs, long_rank, shorts), (shorts, short_rank, longs)):
        for c in rank:
            if len(side) >= n:
                break
            if c not in side and c not in other:
                side.add(c)
    key = lambda i: long_rank.index(i)  # noqa: E731
    return tuple(sorted(longs, key=key)), tuple(sorted(shorts, key=lambda i: short_rank.index(i)))


def daily_return(long, short, prev_close: np.ndarray, close: np.ndarray) -> tuple[float, float, tuple[int, ...]]:
    """Sum of signed position returns, and the same divided by the position count.

    Positions with a missing or non-positive price are dropped and reported.
    """
    terms = []
    dropped = []
    for side, sign in ((long, 1.0), (short, -1.0)):
        for i in side:
            p0, p1 = prev_close[i], close[i]
            if not (np.isfinite(p0) and np.isfinite(p1) and p0 > 0 and p1 > 0):
                dropped.append(i)
                continue
            terms.append(sign * (p1 - p0) / p0)
    # fsum is exactly rounded, so swapping every side flips the sign exactly
    total = math.fsum(terms)
    rate = total / len(terms) if terms else 0.0
    return total, rate, tuple(dropped)


def run_backtest(probs_by_day: dict[int, np.ndarray], close: np.ndarray, n: int = 15, tickers=None) -> PortfolioLedger:
    """``probs_by_day[t]`` is the prediction made with data through t-1 for day t."""
    ledger = PortfolioLedger()
    for t in sorted(probs_by_day):
        lo, sh = build_portfolio(probs_by_day[t], n, tickers)
        r_sum, r_rate, dropped = daily_return(lo, sh, close[t - 1], close[t])
        ledger.days.append(DayBook(t, lo, sh, r_sum, r_rate, dropped))
    return ledger


@dataclass(frozen=True)
class SharpeResult:
    value: float | None

    @property
    def defined(self) -> bool:
        return self.value is not None


def sharpe(returns, risk_free=None, annualize: bool = True) -> SharpeResult:
    """mean/std of daily excess returns (sample std), times sqrt(252).

    ``risk_free`` is a daily rate (scalar or aligned series); None means 0.
    Zero volatility gives an undefined result instead of an infinity.
    """
    r = np.asarray(returns, dtype=np.float64)
    if r.size < 2:
        raise ValueError("Sharpe ratio needs at least two returns")
    rf = 0.0 if risk_free is None else np.asarray(risk_free, dtype=np.float64)
    x = r - rf
    mu = math.fsum(x) / x.size
    var = math.fsum((x - mu) ** 2) / (x.size - 1)
    sd = math.sqrt(var)
    if sd <= 1e-15 * max(1.0, abs(mu)):
        return SharpeResult(None)
    s = mu / sd
    return SharpeResult(s * math.sqrt(TRADING_DAYS) if annualize else s)


def equity_curve(rates, start: float = 100.0) -> tuple[np.ndarray, bool]:
    """Compounded value path starting at ``start``; floors at 0 (flag set) on a -100% day."""
    rates = np.asarray(rates, dtype=np.float64)
    if not np.all(np.isfinite(rates)):
        raise ValueError("returns must be finite")
    out = np.empty(rates.size + 1)
    out[0] = start
    ruined = False
    for k, r in enumerate(rates, start=1):
        if ruined or r <= -1.0:
            ruined = True
            out[k] = 0.0
        else:
            out[k] = out[k - 1] * (1.0 + r)
    return out, ruined


def load_risk_free(path: str | Path) -> dict[str, float]:
    """``date,annual_rate`` CSV (fractions, e.g. 0.02) -> daily rates."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out[rec["date"].strip()] = float(rec["annual_rate"]) / TRADING_DAYS
    return out


def write_equity_csv(path: str | Path, dates, ledger: PortfolioLedger, equity: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "r_sum", "r_rate", "equity"])
        for k, d in enumerate(ledger.days):
            w.writerow([dates[d.day], repr(d.r_sum), repr(d.r_rate), repr(float(equity[k + 1]))])
