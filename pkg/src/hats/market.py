"""Price ingestion, change rates, three-class labels, walk-forward phases."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

UP, NEUTRAL, DOWN = 0, 1, 2
CLASS_NAMES = ("up", "neutral", "down")
LOOKBACK = 50


class IngestionError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class MarketFrame:
    """Aligned (days x companies) closes; ``filled`` marks forward-filled cells."""

    tickers: tuple[str, ...]
    dates: tuple[str, ...]
    close: np.ndarray
    filled: np.ndarray | None = None
    dropped: tuple[str, ...] = ()

    def __post_init__(self):
        if self.close.shape != (len(self.dates), len(self.tickers)):
            raise ValueError(f"close shape {self.close.shape} != ({len(self.dates)}, {len(self.tickers)})")
        if list(self.dates) != sorted(set(self.dates)):
            raise ValueError("dates must be strictly increasing")
        if not np.all(self.close > 0):
            raise DomainError("prices must be strictly positive")

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_companies(self) -> int:
        return len(self.tickers)

    @property
    def returns(self) -> np.ndarray:
        return change_rates(self.close)


@dataclass(frozen=True)
class LabelRule:
    down_threshold: float
    up_threshold: float

    def __post_init__(self):
        if self.down_threshold > self.up_threshold:
            raise ValueError("down_threshold must not exceed up_threshold")

    def label(self, r: float) -> int:
        if r <= self.down_threshold:
            return DOWN
        if r >= self.up_threshold:
            return UP
        return NEUTRAL


@dataclass(frozen=True)
class PhaseSplit:
    phase: int
    train: range
    eval: range
    test: range

    def __post_init__(self):
        if not (self.train.stop <= self.eval.start and self.eval.stop <= self.test.start):
            raise ValueError("phase blocks must be ordered train -> eval -> test")


@dataclass(frozen=True)
class InputWindow:
    company: str
    day: int
    values: np.ndarray = field(repr=False)


# ---------------------------------------------------------------- ingestion

def _parse_date(s: str, lineno: int) -> str:
    try:
        return dt.date.fromisoformat(s.strip()).isoformat()
    except ValueError:
        raise IngestionError(f"line {lineno}: bad date {s!r}") from None


def load_prices(path: str | Path, policy: str = "ffill", max_missing: float = 0.05) -> MarketFrame:
    """Read a ``date,ticker,close`` CSV into an aligned frame.

    ``policy="ffill"`` forward-fills gaps (flagged in ``frame.filled``) and drops
    tickers missing more than ``max_missing`` of the calendar; ``"intersect"``
    keeps only dates every ticker has.
    """
    rows: dict[str, dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError("empty price file")
        if [h.strip().lower() for h in header] != ["date", "ticker", "close"]:
            raise IngestionError(f"line 1: expected header date,ticker,close, got {header}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 3:
                raise IngestionError(f"line {lineno}: expected 3 fields, got {len(rec)}")
            date = _parse_date(rec[0], lineno)
            try:
                close = float(rec[2])
            except ValueError:
                raise IngestionError(f"line {lineno}: close {rec[2]!r} is not a number") from None
            if not np.isfinite(close) or close <= 0:
                raise IngestionError(f"line {lineno}: close must be positive, got {rec[2]!r}")
            rows.setdefault(rec[1].strip(), {})[date] = close
    if not rows:
        raise IngestionError("no price rows")
    return align_prices(rows, policy=policy, max_missing=max_missing)


def align_prices(rows: dict[str, dict[str, float]], policy: str = "ffill",
                 max_missing: float = 0.05) -> MarketFrame:
    all_dates = sorted(set().union(*(d.keys() for d in rows.values())))
    dropped = []
    if policy == "intersect":
        common = set(all_dates)
        for d in rows.values():
            common &= set(d)
        dates = sorted(common)
        tickers = sorted(rows)
        if not dates:
            raise IngestionError("no date is shared by every ticker")
        close = np.array([[rows[t][d] for t in tickers] for d in dates])
        return MarketFrame(tuple(tickers), tuple(dates), close, np.zeros_like(close, dtype=bool))
    if policy != "ffill":
        raise ValueError(f"unknown calendar policy {policy!r}")
    keep = []
    for t in sorted(rows):
        missing = 1.0 - len(rows[t]) / len(all_dates)
        if missing > max_missing:
            dropped.append(t)
            log.warning("dropping %s: %.1f%% of days missing", t, 100 * missing)
        else:
            keep.append(t)
    if not keep:
        raise IngestionError("every ticker was dropped for missing data")
    # leading gaps cannot be forward-filled; start the calendar where all kept tickers exist
    start = max(min(rows[t]) for t in keep)
    dates = [d for d in all_dates if d >= start]
    close = np.empty((len(dates), len(keep)))
    filled = np.zeros_like(close, dtype=bool)
    for j, t in enumerate(keep):
        last = None
        for i, d in enumerate(dates):
            v = rows[t].get(d)
            if v is None:
                close[i, j] = last
                filled[i, j] = True
            else:
                close[i, j] = last = v
    if filled.any():
        log.info("forward-filled %d cells", int(filled.sum()))
    return MarketFrame(tuple(keep), tuple(dates), close, filled, tuple(dropped))


def save_prices(frame: MarketFrame, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "ticker", "close"])
        for i, d in enumerate(frame.dates):
            for j, t in enumerate(frame.tickers):
                w.writerow([d, t, repr(float(frame.close[i, j]))])


# ---------------------------------------------------------------- returns & labels

def change_rates(close: np.ndarray) -> np.ndarray:
    """R[t] = (P[t] - P[t-1]) / P[t-1]; row 0 is NaN (no previous close)."""
    close = np.asarray(close, dtype=np.float64)
    if close.shape[0] < 2:
        raise DomainError("need at least two days of prices")
    if np.any(close <= 0):
        raise DomainError("non-positive price")
    out = np.full_like(close, np.nan)
    out[1:] = (close[1:] - close[:-1]) / close[:-1]
    return out


def prices_from_returns(returns: np.ndarray, start: np.ndarray | float = 100.0) -> np.ndarray:
    """Inverse of change_rates; ``returns[0]`` is ignored."""
    returns = np.asarray(returns, dtype=np.float64)
    out = np.empty_like(returns)
    out[0] = start
    for t in range(1, len(returns)):
        out[t] = out[t - 1] * (1.0 + returns[t])
    return out


def fit_thresholds(train_returns: np.ndarray, neutral_fraction: float = 1 / 3) -> LabelRule:
    """Quantile thresholds leaving ``neutral_fraction`` of the mass in the middle band."""
    r = np.asarray(train_returns, dtype=np.float64).ravel()
    r = r[np.isfinite(r)]
    if r.size == 0:
        raise ValueError("no training returns to fit thresholds on")
    if not 0.0 <= neutral_fraction < 1.0:
        raise ValueError("neutral_fraction must lie in [0, 1)")
    if np.all(r == r[0]):
        raise ValueError("all training returns are equal; pass explicit thresholds instead")
    lo = float(np.quantile(r, (1.0 - neutral_fraction) / 2))
    hi = float(np.quantile(r, (1.0 + neutral_fraction) / 2))
    return LabelRule(lo, hi)


def assign_labels(returns: np.ndarray, rule: LabelRule) -> np.ndarray:
    """Elementwise labels; NaN returns get -1.  Ties go to the directional class."""
    r = np.asarray(returns, dtype=np.float64)
    out = np.full(r.shape, NEUTRAL, dtype=np.int64)
    out[r >= rule.up_threshold] = UP
    out[r <= rule.down_threshold] = DOWN
    out[~np.isfinite(r)] = -1
    return out


def class_counts(labels: np.ndarray) -> dict[str, int]:
    lab = np.asarray(labels)
    return {name: int((lab == k).sum()) for k, name in enumerate(CLASS_NAMES)}


# ---------------------------------------------------------------- phases & windows

def split_phases(n_days: int, train: int = 250, eval: int = 50, test: int = 100,
                 stride: int | None = None) -> list[PhaseSplit]:
    """Walk-forward phases over day indices; never emits a partial phase."""
    stride = test if stride is None else stride
    if stride <= 0:
        raise ValueError("stride must be positive")
    span = train + eval + test
    if n_days < span:
        raise ValueError(f"need at least {span} days for one phase, have {n_days}")
    phases = []
    start = 0
    while start + span <= n_days:
        a, b, c = start + train, start + train + eval, start + span
        phases.append(PhaseSplit(len(phases) + 1, range(start, a), range(a, b), range(b, c)))
        start += stride
    return phases


def window_matrix(returns: np.ndarray, days, lookback: int = LOOKBACK) -> np.ndarray:
    """(len(days), companies, lookback) array of the returns preceding each day."""
    days = np.asarray(list(days), dtype=np.intp)
    if days.size and days.min() < lookback + 1:
        raise IndexError(f"day {int(days.min())} needs {lookback} prior returns (min day {lookback + 1})")
    if days.size and days.max() > returns.shape[0]:
        raise IndexError(f"day {int(days.max())} beyond the calendar")
    offsets = np.arange(-lookback, 0)
    out = returns[days[:, None] + offsets[None, :]]  # (D, L, n)
    return np.ascontiguousarray(np.swapaxes(out, 1, 2))


def windows_for(frame: MarketFrame, t: int, lookback: int = LOOKBACK) -> list[InputWindow]:
    if t < lookback + 1:
        raise IndexError(f"day {t} needs {lookback} prior returns (min day {lookback + 1})")
    w = window_matrix(frame.returns, [t], lookback)[0]
    return [InputWindow(tk, t, w[j]) for j, tk in enumerate(frame.tickers)]


def usable_days(days: range, lookback: int = LOOKBACK, n_days: int | None = None) -> list[int]:
    """Days in ``days`` that have a full lookback window and lie in the calendar."""
    hi = days.stop if n_days is None else min(days.stop, n_days)
    return list(range(max(days.start, lookback + 1), hi))


def threshold_report(phases_rules: list[tuple[int, LabelRule, dict[str, int]]]) -> list[dict]:
    return [{"phase": p, "down_threshold": r.down_threshold, "up_threshold": r.up_threshold,
             "class_counts": c} for p, r, c in phases_rules]
