"""Planted-signal market: one lead-lag relation hidden among noise relations.

Companies are joined by a *signal* relation (a direct parent/subsidiary link,
property P749).  A follower's return on day t is ``beta`` times its leader's
return on day t-1 plus fresh noise, so the leader's last move shifts the
follower's next-day distribution.  Noise relations are shared-entity
meta-paths (same country, exchange, industry, ...) drawn independently of the
price process.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import TripleStore, build_metapaths
from .market import MarketFrame, prices_from_returns, save_prices

SIGNAL_PROPERTY = "P749"
NOISE_PROPERTIES = ("P17", "P414", "P452", "P1454", "P159", "P31")
LAYOUTS = ("leaders", "pairs", "cycle")


@dataclass
class SyntheticMarket:
    frame: MarketFrame
    store: TripleStore
    signal_relation: str
    noise_relations: tuple[str, ...]
    industries: dict[str, str]
    leaders: tuple[int, ...]

    def graph(self):
        return build_metapaths(self.store, self.frame.tickers)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"prices": out / "prices.csv", "triples": out / "triples.tsv", "companies": out / "companies.csv"}
        save_prices(self.frame, paths["prices"])
        with open(paths["triples"], "w", encoding="utf-8") as fh:
            for s, p, o in self.store.triples:
                fh.write(f"{s}\t{p}\t{o}\n")
        ent = {t: e for e, t in self.store.companies.items()}
        with open(paths["companies"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ticker", "entity_id", "industry"])
            for t in self.frame.tickers:
                w.writerow([t, ent[t], self.industries[t]])
        return paths


def generate(n_companies: int = 20, n_days: int = 200, n_noise: int = 1, seed: int = 0,
             beta: float = 0.9, layout: str = "leaders", followers_per_leader: int = 3,
             noise_groups: int = 2, vol: float = 0.02, shocks: str = "gaussian",
             lead_scale: float = 1.0) -> SyntheticMarket:
    """Build prices plus knowledge triples with a planted relation.

    ``layout`` decides what the signal relation carries:

    - ``"leaders"``: each leader has ``followers_per_leader`` followers that
      repeat its previous-day move; leaders move independently.
    - ``"pairs"``: companies are linked two by two and each partner repeats the
      other's previous-day move.
    - ``"cycle"``: linked partners move together along a shared 3-day cycle
      through a down, a flat and an up move (a per-pair permutation), so every
      class gets the same share of days and both windows point the same way.

    With ``lead_scale > 1`` leaders in the ``"leaders"`` layout move that many
    times more than followers, and followers repeat the scaled-down move.
    ``shocks="ternary"`` draws unit-variance shocks from {-1, 0, 1} * sqrt(1.5),
    which keeps most returns far from class thresholds.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}, got {layout!r}")
    if shocks not in ("gaussian", "ternary"):
        raise ValueError(f"shocks must be 'gaussian' or 'ternary', got {shocks!r}")
    if n_noise > len(NOISE_PROPERTIES):
        raise ValueError(f"at most {len(NOISE_PROPERTIES)} noise relations")
    rng = np.random.default_rng(seed)
    tickers = tuple(f"C{i:03d}" for i in range(n_companies))
    order = rng.permutation(n_companies)
    source = np.full(n_companies, -1)
    leaders: tuple[int, ...] = ()
    if layout == "leaders":
        group = followers_per_leader + 1
        n_leaders = max(1, int(np.ceil(n_companies / group)))
        lead = order[:n_leaders]
        for k, i in enumerate(order[n_leaders:]):
            source[i] = lead[k % n_leaders]
        leaders = tuple(sorted(int(x) for x in lead))
    else:
        for a, b in zip(order[0::2], order[1::2]):
            source[b] = a
            if layout == "pairs":
                source[a] = b
        if layout == "cycle":
            leaders = tuple(sorted(int(x) for x in order[0::2]))
            cycles = {int(a): rng.permutation(3) - 1.0 for a in order[0::2]}

    def draw():
        if shocks == "ternary":
            return np.sqrt(1.5) * (rng.integers(0, 3, n_companies) - 1.0)
        return rng.standard_normal(n_companies)

    # r_t = beta * r_src,t-lag + sqrt(1 - beta^2) * vol * eps keeps every series at std ``vol``
    R = np.zeros((n_days, n_companies))
    R[1] = vol * draw()
    fresh = np.sqrt(1.0 - beta ** 2) * vol
    has_src = source >= 0
    scale = lead_scale if layout == "leaders" else 1.0
    if layout == "leaders":
        R[1, ~has_src] *= lead_scale
    for t in range(2, n_days):
        eps = draw()
        R[t] = vol * eps
        if layout == "cycle":
            for a, cyc in cycles.items():
                R[t, a] = beta * vol * np.sqrt(1.5) * cyc[t % 3] + fresh * eps[a]
            R[t, has_src] = beta * R[t, source[has_src]] + fresh * eps[has_src]
        else:
            if layout == "leaders":
                R[t, ~has_src] *= lead_scale
            R[t, has_src] = beta * R[t - 1, source[has_src]] / scale + fresh * eps[has_src]
    R = np.clip(R, -0.5, 0.5)
    close = prices_from_returns(R, start=rng.uniform(20, 200, n_companies))
    dates = tuple(np.datetime_as_string(np.datetime64("2015-01-01") + np.arange(n_days), unit="D"))
    frame = MarketFrame(tickers, dates, close)

    ent = {t: f"Q{1000 + i}" for i, t in enumerate(tickers)}
    triples = []
    for i in range(n_companies):
        if source[i] >= 0 and (layout != "pairs" or i < source[i]):
            triples.append((ent[tickers[i]], SIGNAL_PROPERTY, ent[tickers[source[i]]]))
    noise_codes = []
    for k, prop in enumerate(NOISE_PROPERTIES[:n_noise]):
        groups = rng.integers(0, noise_groups, n_companies)
        for i in range(n_companies):
            triples.append((ent[tickers[i]], prop, f"Q9{k}{groups[i]:02d}"))
        noise_codes.append(f"{prop}-{prop}")
    industry_groups = rng.integers(0, 4, n_companies)
    industries = {t: f"sector{industry_groups[i]}" for i, t in enumerate(tickers)}
    store = TripleStore(triples=triples, companies={e: t for t, e in ent.items()})
    return SyntheticMarket(frame, store, SIGNAL_PROPERTY, tuple(noise_codes), industries, leaders)
