"""Command-line pipeline: ``hats <command> [--config FILE] [--key value ...]``.

Every command writes only under the configured output directory, prints a
one-line JSON status record on stdout, and on failure prints a one-line JSON
error record on stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .backtest import equity_curve, load_risk_free, run_backtest, sharpe, write_equity_csv
from .config import RunConfig, parse_config, parse_overrides
from .graph import RelationGraph, build_metapaths, load_companies, load_industries, load_triples, relation_name
from .market import MarketFrame, load_prices, save_prices, split_phases
from .models import load_checkpoint
from .plotting import attention_figure, equity_figure
from .synthetic import generate
from .training import (PhaseData, attention_report, export_embeddings, predict, prepare_phase,
                       ranked_views, read_ablation_csv, relation_ablation, run_experiment,
                       test_metrics, write_ablation_csv)

log = logging.getLogger("hats")

COMMANDS = ("ingest", "build-graph", "train", "evaluate", "backtest", "ablate-relations",
            "report-attention", "export-embeddings", "gen-synthetic")

USAGE = f"""usage: hats <command> [--config FILE] [--key value ...]

commands: {', '.join(COMMANDS)}
any config key can be given as --key value; unknown keys are rejected
"""


class PipelineError(RuntimeError):
    pass


# ---------------------------------------------------------------- shared loading

def _frame(cfg: RunConfig) -> MarketFrame:
    return load_prices(cfg.data_path("prices", "prices.csv"), cfg.missing_policy, cfg.max_missing)


def _graph(cfg: RunConfig, frame: MarketFrame) -> RelationGraph:
    saved = cfg.out / "graph.json"
    if saved.exists():
        g = RelationGraph.load(saved)
        if g.tickers == frame.tickers:
            return g
        log.warning("graph.json was built for a different ticker set; rebuilding")
    companies = load_companies(cfg.data_path("companies", "companies.csv"))
    store = load_triples(cfg.data_path("triples", "triples.tsv"), companies, frame.tickers)
    return build_metapaths(store, frame.tickers, cfg.max_hops)


def _industries(cfg: RunConfig) -> dict[str, str]:
    path = Path(cfg.industries) if cfg.industries else cfg.data_path("companies", "companies.csv")
    return load_industries(path) if path.exists() else {}


def _phases(cfg: RunConfig, frame: MarketFrame):
    phases = split_phases(frame.n_days, cfg.train_days, cfg.eval_days, cfg.test_days, cfg.stride or None)
    if cfg.phases:
        known = {p.phase for p in phases}
        missing = sorted(set(cfg.phases) - known)
        if missing:
            raise PipelineError(f"phase(s) {missing} do not exist; {len(phases)} phases fit the calendar")
        phases = [p for p in phases if p.phase in cfg.phases]
    return phases


def _one_phase(cfg: RunConfig, frame: MarketFrame):
    for p in split_phases(frame.n_days, cfg.train_days, cfg.eval_days, cfg.test_days, cfg.stride or None):
        if p.phase == cfg.phase:
            return p
    raise PipelineError(f"phase {cfg.phase} does not exist for {frame.n_days} days")


def _risk_free(cfg: RunConfig) -> tuple[dict[str, float] | None, float, str]:
    if cfg.risk_free:
        return load_risk_free(cfg.risk_free), 0.0, "file"
    return None, cfg.risk_free_rate / 252.0, "constant"


def _ckpt_path(cfg: RunConfig, phase: int, kind: str, seed: int) -> Path:
    return cfg.out / "checkpoints" / f"phase{phase}_{kind}_seed{seed}.json"


def _trained(cfg: RunConfig, frame: MarketFrame, graph: RelationGraph, phases, kinds=None):
    """Yield (phase data, kind, seed, model) for every checkpoint the config names."""
    tc = cfg.train_config()
    for phase in phases:
        data = prepare_phase(frame, phase, tc)
        for kind in kinds or cfg.models:
            for seed in cfg.seeds:
                path = _ckpt_path(cfg, phase.phase, kind, seed)
                if not path.exists():
                    raise PipelineError(f"missing checkpoint {path}; run 'train' first")
                model, _ = load_checkpoint(path, graph)
                yield data, kind, seed, model


def _write_rows(path: Path, header: list[str], rows: list[list]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _num(x) -> str:
    return "" if x is None else repr(float(x))


# ---------------------------------------------------------------- commands

def cmd_gen_synthetic(cfg: RunConfig) -> list[Path]:
    syn = generate(cfg.syn_companies, cfg.syn_days, cfg.syn_noise, cfg.syn_seed, cfg.syn_beta,
                   cfg.syn_layout, vol=0.02, shocks=cfg.syn_shocks, lead_scale=cfg.syn_lead_scale)
    paths = syn.write(cfg.out / "data")
    info = cfg.out / "data" / "synthetic.json"
    info.write_text(json.dumps({"signal_relation": syn.signal_relation,
                                "noise_relations": list(syn.noise_relations),
                                "leaders": [syn.frame.tickers[i] for i in syn.leaders]}, indent=1) + "\n",
                    encoding="utf-8")
    return list(paths.values()) + [info]


def cmd_ingest(cfg: RunConfig) -> list[Path]:
    frame = _frame(cfg)
    aligned = cfg.out / "prices_aligned.csv"
    save_prices(frame, aligned)
    phases = split_phases(frame.n_days, cfg.train_days, cfg.eval_days, cfg.test_days, cfg.stride or None) \
        if frame.n_days >= cfg.train_days + cfg.eval_days + cfg.test_days else []
    report = {"n_days": frame.n_days, "n_companies": frame.n_companies,
              "first_date": frame.dates[0], "last_date": frame.dates[-1],
              "filled_cells": int(frame.filled.sum()) if frame.filled is not None else 0,
              "filled_by_ticker": {t: int(frame.filled[:, j].sum()) for j, t in enumerate(frame.tickers)
                                   if frame.filled is not None and frame.filled[:, j].any()},
              "dropped": list(frame.dropped),
              "phases": [{"phase": p.phase, "train": [p.train.start, p.train.stop],
                          "eval": [p.eval.start, p.eval.stop], "test": [p.test.start, p.test.stop]}
                         for p in phases]}
    rep = cfg.out / "ingest_report.json"
    rep.write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    return [aligned, rep]


def cmd_build_graph(cfg: RunConfig) -> list[Path]:
    frame = _frame(cfg)
    companies = load_companies(cfg.data_path("companies", "companies.csv"))
    store = load_triples(cfg.data_path("triples", "triples.tsv"), companies, frame.tickers)
    graph = build_metapaths(store, frame.tickers, cfg.max_hops)
    gpath = cfg.out / "graph.json"
    graph.save(gpath)
    rows = [[c, relation_name(c), len(graph.edges[c])] for c in graph.relations]
    rpath = _write_rows(cfg.out / "relations.csv", ["relation_code", "relation_name", "edge_count"], rows)
    return [gpath, rpath]


def cmd_train(cfg: RunConfig) -> list[Path]:
    frame = _frame(cfg)
    graph = _graph(cfg, frame)
    rf_map, rf_const, _ = _risk_free(cfg)
    abl = cfg.out / "ablation.csv"
    scores = read_ablation_csv(abl) if abl.exists() else None
    if scores is not None:
        scores = {k: v for k, v in scores.items() if math.isfinite(v)}
    rf = rf_map if rf_map is not None else rf_const
    run_experiment(frame, graph, _phases(cfg, frame), cfg.train_config(), cfg.models, cfg.out, rf,
                   ablation_scores=scores, workers=cfg.workers)
    return [cfg.out / "results.csv", cfg.out / "runs.jsonl", cfg.out / "run_log.jsonl", cfg.out / "checkpoints"]


def cmd_evaluate(cfg: RunConfig) -> list[Path]:
    frame = _frame(cfg)
    graph = _graph(cfg, frame)
    rows = []
    for data, kind, seed, model in _trained(cfg, frame, graph, _phases(cfg, frame)):
        m, _ = test_metrics(model, data)
        rows.append([data.phase.phase, kind, seed, repr(m.macro_f1), repr(m.accuracy),
                     *[repr(v) for v in m.precision], *[repr(v) for v in m.recall], *[repr(v) for v in m.f1]])
    header = ["phase", "model", "seed", "f1", "accuracy",
              "precision_up", "precision_neutral", "precision_down",
              "recall_up", "recall_neutral", "recall_down", "f1_up", "f1_neutral", "f1_down"]
    return [_write_rows(cfg.out / "evaluation.csv", header, rows)]


def cmd_backtest(cfg: RunConfig) -> list[Path]:
    frame = _frame(cfg)
    graph = _graph(cfg, frame)
    rf_map, rf_const, rf_source = _risk_free(cfg)
    eq_dir = cfg.out / "equity"
    eq_dir.mkdir(parents=True, exist_ok=True)
    rows, out = [], []
    rates_by: dict[tuple[int, str], list[np.ndarray]] = {}
    dates_by: dict[int, list[str]] = {}
    for data, kind, seed, model in _trained(cfg, frame, graph, _phases(cfg, frame)):
        probs = predict(model, data.test)
        ledger = run_backtest({t: probs[k] for k, t in enumerate(data.test.days)}, frame.close,
                              cfg.portfolio_size, frame.tickers)
        curve, ruined = equity_curve(ledger.r_rate)
        path = eq_dir / f"phase{data.phase.phase}_{kind}_seed{seed}.csv"
        write_equity_csv(path, frame.dates, ledger, curve)
        out.append(path)
        if rf_map is not None:
            rf = np.array([rf_map.get(frame.dates[d.day], 0.0) for d in ledger.days])
        else:
            rf = rf_const
        sr = sharpe(ledger.r_rate, rf) if len(ledger.days) >= 2 else None
        n_days = len(ledger.days)
        rows.append([data.phase.phase, kind, seed, n_days,
                     repr(math.fsum(ledger.r_sum) / max(n_days, 1)),
                     repr(math.fsum(ledger.r_rate) / max(n_days, 1)),
                     _num(sr.value if sr is not None else None), repr(float(curve[-1])),
                     int(ruined), rf_source])
        rates_by.setdefault((data.phase.phase, kind), []).append(ledger.r_rate)
        dates_by[data.phase.phase] = [frame.dates[d.day] for d in ledger.days]
    header = ["phase", "model", "seed", "days", "avg_daily_sum", "avg_daily_return", "sharpe",
              "final_equity", "ruined", "risk_free"]
    out.insert(0, _write_rows(cfg.out / "backtest.csv", header, rows))
    for phase in sorted(dates_by):
        curves = {kind: equity_curve(np.mean(np.vstack(r), axis=0))[0]
                  for (p, kind), r in sorted(rates_by.items()) if p == phase}
        out.append(equity_figure(curves, cfg.out / f"equity_phase{phase}.png", dates_by[phase],
                                 title=f"Phase {phase}: value of 100 (seed-mean daily return)"))
    return out


def cmd_ablate_relations(cfg: RunConfig) -> list[Path]:
    frame = _frame(cfg)
    graph = _graph(cfg, frame)
    tc = cfg.train_config()
    data = prepare_phase(frame, _one_phase(cfg, frame), tc)
    rows = relation_ablation(frame, graph, data, tc, cfg.seeds[0])
    path = cfg.out / "ablation.csv"
    write_ablation_csv(rows, path)
    return [path]


def cmd_report_attention(cfg: RunConfig) -> list[Path]:
    frame = _frame(cfg)
    graph = _graph(cfg, frame)
    per_seed = []
    for data, _, _, model in _trained(cfg, frame, graph, [_one_phase(cfg, frame)], kinds=["hats"]):
        per_seed.append(attention_report(model, data.test))
    scores = {c: math.fsum(s[c] for s in per_seed) / len(per_seed) for c in graph.relations}
    order = sorted(scores, key=lambda c: (-scores[c], c))
    csv_path = _write_rows(cfg.out / "attention.csv", ["relation_code", "relation_name", "mean_score"],
                           [[c, relation_name(c), repr(scores[c])] for c in order])
    views = cfg.out / "attention_views.json"
    views.write_text(json.dumps(ranked_views(scores), indent=1) + "\n", encoding="utf-8")
    fig = attention_figure({relation_name(c): v for c, v in scores.items()}, cfg.out / "attention.png")
    return [csv_path, views, fig]


def cmd_export_embeddings(cfg: RunConfig) -> list[Path]:
    frame = _frame(cfg)
    graph = _graph(cfg, frame)
    phase = _one_phase(cfg, frame)
    kind, seed = cfg.models[0], cfg.seeds[0]
    path = _ckpt_path(cfg, phase.phase, kind, seed)
    if not path.exists():
        raise PipelineError(f"missing checkpoint {path}; run 'train' first")
    model, _ = load_checkpoint(path, graph)
    data: PhaseData = prepare_phase(frame, phase, cfg.train_config())
    day = data.test.days[0] if cfg.day < 0 else cfg.day
    out = cfg.out / f"embeddings_phase{phase.phase}_{kind}_day{day}.csv"
    export_embeddings(model, frame, data, day, out, _industries(cfg))
    return [out]


HANDLERS = {
    "ingest": cmd_ingest,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "backtest": cmd_backtest,
    "ablate-relations": cmd_ablate_relations,
    "report-attention": cmd_report_attention,
    "export-embeddings": cmd_export_embeddings,
    "gen-synthetic": cmd_gen_synthetic,
}


def _setup_logging(cfg: RunConfig) -> logging.Handler:
    cfg.out.mkdir(parents=True, exist_ok=True)
    # timestamps live only in the log file, never in result files
    fh = logging.FileHandler(cfg.out / "hats.log", encoding="utf-8")
    fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.addHandler(fh)
    root.setLevel(getattr(logging, cfg.log_level.upper(), logging.INFO))
    return fh


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        sys.stdout.write(USAGE)
        return 0 if argv else 2
    command = argv[0]
    if command not in HANDLERS:
        sys.stderr.write(f"unknown command {command!r}\n{USAGE}")
        return 2
    parser = argparse.ArgumentParser(prog=f"hats {command}", add_help=False)
    parser.add_argument("--config", default=None)
    known, rest = parser.parse_known_args(argv[1:])
    handler = None
    try:
        cfg = parse_config(known.config, parse_overrides(rest))
        handler = _setup_logging(cfg)
        cfg.echo()
        log.info("running %s", command)
        artifacts = HANDLERS[command](cfg)
    except Exception as exc:
        record = {"status": "error", "command": command, "error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(record) + "\n")
        logging.getLogger("hats").debug("failure", exc_info=True)
        return 1
    finally:
        if handler is not None:
            logging.getLogger().removeHandler(handler)
            handler.close()
    sys.stdout.write(json.dumps({"status": "ok", "command": command,
                                 "artifacts": [str(p) for p in artifacts]}) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
