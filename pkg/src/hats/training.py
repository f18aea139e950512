"""Walk-forward training, early stopping on macro-F1, experiments and reports."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import autograd as ag
from .autograd import AdamState, NumericError
from .backtest import run_backtest, sharpe
from .graph import RelationGraph, select_top_k
from .market import (CLASS_NAMES, LOOKBACK, LabelRule, MarketFrame, PhaseSplit, assign_labels,
                     class_counts, fit_thresholds, usable_days, window_matrix)
from .metrics import Metrics, evaluate
from .models import ModelSpec, NodeModel, save_checkpoint

log = logging.getLogger(__name__)

LR_RANGE = (1e-5, 1e-3)
WD_RANGE = (1e-5, 1e-4)
DROPOUT_RANGE = (0.1, 0.9)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    dropout: float = 0.3
    max_epochs: int = 100
    patience: int = 20
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    model: str = "hats"
    encoder: str = "lstm"
    hidden: int = 64
    rel_dim: int = 16
    gcn_h1: int = 32
    gcn_h2: int = 16
    batch_days: int = 1
    lookback: int = LOOKBACK
    top_k: int = 20
    portfolio_size: int = 15
    neutral_fraction: float = 1 / 3
    down_threshold: float | None = None
    up_threshold: float | None = None
    target_train_accuracy: float | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name, (lo, hi) in (("learning_rate", LR_RANGE), ("weight_decay", WD_RANGE),
                               ("dropout", DROPOUT_RANGE)):
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ConfigError(f"{name}={v} outside the tuning range [{lo:g}, {hi:g}] "
                                  "(learning rate 1e-5..1e-3, weight decay 1e-5..1e-4, dropout 0.1..0.9)")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        if self.batch_days < 1:
            raise ConfigError("batch_days must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    def model_spec(self, kind: str | None = None, relations=None) -> ModelSpec:
        return ModelSpec(kind=kind or self.model, encoder=self.encoder, hidden=self.hidden,
                         rel_dim=self.rel_dim, gcn_h1=self.gcn_h1, gcn_h2=self.gcn_h2,
                         dropout=self.dropout, relations=relations)


@dataclass
class Block:
    days: list[int]
    windows: np.ndarray  # (D, n, L)
    labels: np.ndarray  # (D, n)


@dataclass
class PhaseData:
    phase: PhaseSplit
    rule: LabelRule
    train: Block
    eval: Block
    test: Block
    input_scale: float

    def counts(self) -> dict[str, int]:
        return class_counts(self.train.labels)


def prepare_phase(frame: MarketFrame, phase: PhaseSplit, cfg: TrainConfig) -> PhaseData:
    """Windows and labels for one phase; thresholds come from training days only."""
    R = frame.returns
    L = cfg.lookback
    train_days = usable_days(phase.train, L, frame.n_days)
    if not train_days:
        raise ValueError(f"phase {phase.phase}: no training day has a full {L}-day window")
    train_r = R[train_days]
    if cfg.down_threshold is not None and cfg.up_threshold is not None:
        rule = LabelRule(cfg.down_threshold, cfg.up_threshold)
    else:
        rule = fit_thresholds(train_r, cfg.neutral_fraction)
    # window inputs are scaled by the training-return spread
    sd = float(np.std(train_r))
    scale = 1.0 / sd if sd > 0 else 1.0

    def block(days: list[int]) -> Block:
        if not days:
            return Block([], np.zeros((0, frame.n_companies, L)), np.zeros((0, frame.n_companies), dtype=np.int64))
        return Block(days, window_matrix(R, days, L), assign_labels(R[days], rule))

    return PhaseData(phase, rule, block(train_days), block(usable_days(phase.eval, L, frame.n_days)),
                     block(usable_days(phase.test, L, frame.n_days)), scale)


# ---------------------------------------------------------------- training

@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_eval_f1: float = -math.inf
    error: str | None = None


def predict(model, block: Block) -> np.ndarray:
    if not block.days:
        return np.zeros((0, block.labels.shape[-1], 3))
    return model.predict_proba(block.windows)


def train_phase(model: NodeModel, data: PhaseData, cfg: TrainConfig, seed: int,
                log_records: list | None = None, tag: dict | None = None) -> tuple[dict, History]:
    """Adam over chronological day batches; keeps the best-eval-F1 parameters."""
    rng = np.random.default_rng([seed, 1])
    params = model.params
    state = AdamState(lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    hist = History()
    best = model.snapshot()
    stale = 0
    D = len(data.train.days)
    eval_block = data.eval if data.eval.days else data.train
    for epoch in range(1, cfg.max_epochs + 1):
        total = 0.0
        try:
            for s in range(0, D, cfg.batch_days):
                sl = slice(s, s + cfg.batch_days)
                logits = model.logits(data.train.windows[sl], training=True, rng=rng)
                loss = ag.cross_entropy_with_logits(logits, data.train.labels[sl], reduction="sum")
                grads = ag.grad(loss, params)
                ag.adam_step(params, grads, state)
                total += loss.item()
                for k in grads:
                    if not np.all(np.isfinite(params[k].data)):
                        raise NumericError(f"parameter {k} diverged")
        except NumericError as exc:
            hist.error = f"epoch {epoch}: {exc}"
            log.error("training diverged (%s); keeping last good checkpoint", hist.error)
            break
        eval_m = evaluate(predict(model, eval_block).argmax(-1), eval_block.labels)
        f1 = eval_m.macro_f1
        rec = {"epoch": epoch, "train_loss": total, "eval_f1": f1}
        if cfg.target_train_accuracy is not None:
            train_m = eval_m if eval_block is data.train else \
                evaluate(predict(model, data.train).argmax(-1), data.train.labels)
            rec["train_accuracy"] = train_m.accuracy
        hist.epochs.append(rec)
        if log_records is not None:
            log_records.append({**(tag or {}), "epoch": epoch, "train_loss": total, "eval_f1": f1})
        if f1 > hist.best_eval_f1:
            hist.best_eval_f1, hist.best_epoch = f1, epoch
            best = model.snapshot()
            stale = 0
        else:
            stale += 1
        if cfg.target_train_accuracy is not None and rec["train_accuracy"] >= cfg.target_train_accuracy:
            break
        if stale >= cfg.patience:
            break
    model.restore(best)
    return best, hist


def test_metrics(model: NodeModel, data: PhaseData) -> tuple[Metrics, np.ndarray]:
    probs = predict(model, data.test)
    return evaluate(probs.argmax(-1), data.test.labels), probs


# ---------------------------------------------------------------- ablation

def relation_ablation(frame: MarketFrame, graph: RelationGraph, data: PhaseData, cfg: TrainConfig,
                      seed: int = 0) -> list[dict]:
    """Train a GCN on each relation alone; rows sorted best F1 first."""
    rows = []
    for code in graph.relations:
        spec = cfg.model_spec("gcn-topk", relations=(code,))
        try:
            model = NodeModel.create(spec, graph, seed, data.input_scale)
            train_phase(model, data, cfg, seed)
            m, _ = test_metrics(model, data)
            rows.append({"relation_code": code, "f1": m.macro_f1, "accuracy": m.accuracy,
                         "edge_count": len(graph.edges[code])})
        except Exception as exc:  # recorded, the sweep continues
            log.error("ablation of %s failed: %s", code, exc)
            rows.append({"relation_code": code, "f1": float("nan"), "accuracy": float("nan"),
                         "edge_count": len(graph.edges[code]), "error": str(exc)})
    rows.sort(key=lambda r: (-(r["f1"] if np.isfinite(r["f1"]) else -1.0), r["relation_code"]))
    return rows


def write_ablation_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["relation_code", "f1", "accuracy", "edge_count"])
        for r in rows:
            w.writerow([r["relation_code"], repr(float(r["f1"])), repr(float(r["accuracy"])), r["edge_count"]])


def read_ablation_csv(path: str | Path) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {r["relation_code"]: float(r["f1"]) for r in csv.DictReader(fh)}


# ---------------------------------------------------------------- reports

def attention_report(model: NodeModel, block: Block) -> dict[str, float]:
    """Mean relation-level weight per relation over test days and the nodes where it is active."""
    tr = model.attention(block.windows)
    act = tr.active  # (n, M)
    w = tr.relation  # (D, n, M)
    out = {}
    for m, code in enumerate(model.graph.relations):
        cnt = int(act[:, m].sum()) * w.shape[0]
        out[code] = float(w[:, act[:, m], m].sum() / cnt) if cnt else 0.0
    return out


def ranked_views(scores: dict[str, float], top: int = 20, bottom: int = 10) -> dict[str, list]:
    order = sorted(scores, key=lambda c: (-scores[c], c))
    return {"top": [[c, scores[c]] for c in order[:top]],
            "bottom": [[c, scores[c]] for c in order[::-1][:bottom]]}


def export_embeddings(model: NodeModel, frame: MarketFrame, data: PhaseData, day: int, path: str | Path,
                      industries: dict[str, str] | None = None) -> np.ndarray:
    """Write E-bar rows for ``day`` with ticker, label and industry columns."""
    if day not in data.test.days:
        raise IndexError(f"day {day} is outside the test range {data.phase.test}")
    k = data.test.days.index(day)
    with ag.no_grad():
        X = model.represent(data.test.windows[k:k + 1]).data[0]
    labels = data.test.labels[k]
    industries = industries or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "label", "industry"] + [f"e{j}" for j in range(X.shape[1])])
        for i, t in enumerate(frame.tickers):
            w.writerow([t, CLASS_NAMES[labels[i]], industries.get(t, "unknown")] + [repr(float(v)) for v in X[i]])
    return X


def load_embeddings(path: str | Path) -> tuple[list[str], list[str], list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    return ([r[0] for r in body], [r[1] for r in body], [r[2] for r in body],
            np.array([[float(x) for x in r[3:]] for r in body]))


# ---------------------------------------------------------------- experiments

RESULT_COLUMNS = ["phase", "model", "f1", "accuracy", "avg_daily_return", "sharpe"]


def run_once(frame: MarketFrame, graph: RelationGraph, data: PhaseData, cfg: TrainConfig, kind: str,
             seed: int, relations=None, log_records: list | None = None,
             rf_daily=None) -> tuple[NodeModel, dict]:
    model = NodeModel.create(cfg.model_spec(kind, relations), graph, seed, data.input_scale)
    tag = {"phase": data.phase.phase, "model": kind, "seed": seed}
    _, hist = train_phase(model, data, cfg, seed, log_records, tag)
    m, probs = test_metrics(model, data)
    ledger = run_backtest({t: probs[k] for k, t in enumerate(data.test.days)}, frame.close,
                          cfg.portfolio_size, frame.tickers)
    if isinstance(rf_daily, dict):
        rf = np.array([rf_daily.get(frame.dates[d.day], 0.0) for d in ledger.days])
    else:
        rf = rf_daily  # None or a constant daily rate
    sr = sharpe(ledger.r_rate, rf) if len(ledger.days) >= 2 else None
    rec = {**tag, "f1": m.macro_f1, "accuracy": m.accuracy,
           "avg_daily_return": float(math.fsum(ledger.r_rate) / max(len(ledger.days), 1)),
           "sharpe": sr.value if sr is not None else None,
           "best_epoch": hist.best_epoch, "epochs": len(hist.epochs), "error": hist.error}
    return model, rec


def aggregate(runs: Iterable[dict]) -> list[dict]:
    """Mean over seeds per (phase, model); undefined values are skipped and counted."""
    groups: dict[tuple, list[dict]] = {}
    for r in runs:
        groups.setdefault((r["phase"], r["model"]), []).append(r)
    out = []
    for (phase, kind), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        row = {"phase": phase, "model": kind, "runs": len(rs)}
        for col in RESULT_COLUMNS[2:]:
            vals = [r[col] for r in rs if r.get(col) is not None and np.isfinite(r[col])]
            row[col] = math.fsum(vals) / len(vals) if vals else None
        out.append(row)
    return out


def write_results_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([r["phase"], r["model"]] +
                       ["" if r[c] is None else repr(float(r[c])) for c in RESULT_COLUMNS[2:]])


def write_jsonl(records: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _run_task(task: tuple) -> tuple[NodeModel | None, dict, list[dict]]:
    frame, graph, data, cfg, kind, seed, relations, rf_daily = task
    epoch_log: list[dict] = []
    try:
        model, rec = run_once(frame, graph, data, cfg, kind, seed, relations, epoch_log, rf_daily)
    except Exception as exc:  # recorded; averages use the survivors
        log.error("phase %d %s seed %d failed: %s", data.phase.phase, kind, seed, exc)
        return None, {"phase": data.phase.phase, "model": kind, "seed": seed, "f1": None,
                      "accuracy": None, "avg_daily_return": None, "sharpe": None,
                      "error": str(exc)}, epoch_log
    return model, rec, epoch_log


def run_experiment(frame: MarketFrame, graph: RelationGraph, phases: list[PhaseSplit], cfg: TrainConfig,
                   models: Iterable[str], out_dir: str | Path | None = None, rf_daily=None,
                   ablation_scores: dict[str, float] | None = None,
                   keep_models: bool = False, workers: int = 1) -> dict:
    """Every phase x model x seed; returns per-run records and seed-averaged rows.

    With ``workers > 1`` the runs of a phase fan out over processes; each run
    is seeded on its own, and results are collected in task order.
    """
    models = list(models)
    epoch_log: list[dict] = []
    runs: list[dict] = []
    thresholds = []
    trained = {}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    for phase in phases:
        data = prepare_phase(frame, phase, cfg)
        thresholds.append({"phase": phase.phase, "down_threshold": data.rule.down_threshold,
                           "up_threshold": data.rule.up_threshold, "class_counts": data.counts()})
        topk = None
        if "gcn-topk" in models:
            scores = ablation_scores
            if scores is None:
                rows = relation_ablation(frame, graph, data, cfg, cfg.seeds[0])
                scores = {r["relation_code"]: r["f1"] for r in rows if np.isfinite(r["f1"])}
                if out is not None:
                    write_ablation_csv(rows, out / f"ablation_phase{phase.phase}.csv")
            topk = tuple(sorted(select_top_k(scores, cfg.top_k)))
        tasks = [(frame, graph, data, cfg, kind, seed, topk if kind == "gcn-topk" else None, rf_daily)
                 for kind in models for seed in cfg.seeds]
        if workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
                results = list(pool.map(_run_task, tasks))
        else:
            results = [_run_task(t) for t in tasks]
        for (_, _, _, _, kind, seed, _, _), (model, rec, elog) in zip(tasks, results):
            runs.append(rec)
            epoch_log.extend(elog)
            if model is None:
                continue
            if keep_models:
                trained[(phase.phase, kind, seed)] = model
            if out is not None:
                save_checkpoint(model, out / "checkpoints" / f"phase{phase.phase}_{kind}_seed{seed}.json",
                                {"phase": phase.phase, "seed": seed,
                                 "rule": [data.rule.down_threshold, data.rule.up_threshold]})
    rows = aggregate(runs)
    if out is not None:
        write_jsonl(epoch_log, out / "run_log.jsonl")
        write_jsonl(runs, out / "runs.jsonl")
        write_results_csv(rows, out / "results.csv")
        (out / "thresholds.json").write_text(json.dumps(thresholds, indent=1) + "\n", encoding="utf-8")
    return {"runs": runs, "rows": rows, "thresholds": thresholds, "models": trained}
