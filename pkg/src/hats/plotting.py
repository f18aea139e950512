"""Report figures rendered straight to PNG files (no display backend needed)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

# fixed metadata keeps re-rendered files byte-identical
_PNG_META = {"Software": None}


def _save(fig: Figure, path: str | Path) -> Path:
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    return Path(path)


def equity_figure(curves: Mapping[str, np.ndarray], path: str | Path, dates: Sequence[str] | None = None,
                  title: str = "Portfolio value") -> Path:
    """One line per label; every curve starts at its initial value (100)."""
    fig = Figure(figsize=(7.0, 3.6))
    ax = fig.add_subplot(1, 1, 1)
    for label, curve in curves.items():
        ax.plot(np.arange(len(curve)), curve, lw=1.4, label=label)
    ax.axhline(100.0, color="0.6", lw=0.8, ls="--")
    if dates:
        ticks = np.linspace(0, len(dates) - 1, num=min(6, len(dates))).astype(int)
        ax.set_xticks(ticks)
        ax.set_xticklabels([dates[i] for i in ticks], fontsize=7)
    ax.set_xlabel("test day")
    ax.set_ylabel("value")
    ax.set_title(title, fontsize=10)
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def attention_figure(scores: Mapping[str, float], path: str | Path, top: int = 20, bottom: int = 10,
                     title: str = "Mean relation attention") -> Path:
    """Horizontal bars for the highest and lowest scoring relations."""
    order = sorted(scores, key=lambda c: (-scores[c], c))
    hi = order[:top]
    lo = [c for c in order[::-1][:bottom] if c not in hi][::-1]
    shown = hi + lo
    fig = Figure(figsize=(6.0, 0.28 * len(shown) + 1.2))
    ax = fig.add_subplot(1, 1, 1)
    y = np.arange(len(shown))[::-1]
    colors = ["tab:blue"] * len(hi) + ["tab:gray"] * len(lo)
    ax.barh(y, [scores[c] for c in shown], color=colors)
    ax.set_yticks(y)
    ax.set_yticklabels(shown, fontsize=7)
    ax.set_xlabel("mean attention")
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)
