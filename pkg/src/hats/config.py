"""Flat key = value run configuration with ``--key value`` overrides."""

from __future__ import annotations

import os
import types
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from .market import LOOKBACK
from .models import MODEL_KINDS
from .synthetic import LAYOUTS
from .training import ConfigError, TrainConfig

OUTPUT_ENV = "HATS_OUTPUT_DIR"
ECHO_NAME = "config.resolved"


@dataclass
class RunConfig:
    # paths; empty data paths fall back to files under ``output_dir``
    prices: str = ""
    triples: str = ""
    companies: str = ""
    industries: str = ""
    risk_free: str = ""
    output_dir: str = "hats_out"
    # ingestion and graph
    missing_policy: str = "ffill"
    max_missing: float = 0.05
    max_hops: int = 2
    # phases
    train_days: int = 250
    eval_days: int = 50
    test_days: int = 100
    stride: int = 0  # 0 means the test length
    phases: tuple[int, ...] = ()  # empty means every phase
    # labels
    neutral_fraction: float = 1 / 3
    down_threshold: float | None = None
    up_threshold: float | None = None
    # training
    models: tuple[str, ...] = ("hats",)
    encoder: str = "lstm"
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    dropout: float = 0.3
    max_epochs: int = 100
    patience: int = 20
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    hidden: int = 64
    rel_dim: int = 16
    gcn_h1: int = 32
    gcn_h2: int = 16
    batch_days: int = 1
    lookback: int = LOOKBACK
    top_k: int = 20
    # backtest
    portfolio_size: int = 15
    risk_free_rate: float = 0.0  # annual, used when no risk-free file is given
    # reports
    phase: int = 1
    day: int = -1  # -1 means the first test day
    # synthetic data
    syn_companies: int = 20
    syn_days: int = 400
    syn_noise: int = 3
    syn_layout: str = "leaders"
    syn_beta: float = 0.99
    syn_lead_scale: float = 3.0
    syn_shocks: str = "ternary"
    syn_seed: int = 0
    # execution
    workers: int = 1
    log_level: str = "INFO"

    def __post_init__(self):
        self.validate()

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def validate(self) -> None:
        self.train_config()  # hyperparameter ranges
        bad = [m for m in self.models if m not in MODEL_KINDS]
        if bad or not self.models:
            raise ConfigError(f"models must be drawn from {', '.join(MODEL_KINDS)}, got {bad or 'nothing'}")
        if self.encoder not in ("lstm", "gru"):
            raise ConfigError(f"encoder must be lstm or gru, got {self.encoder!r}")
        if self.missing_policy not in ("ffill", "intersect"):
            raise ConfigError(f"missing_policy must be ffill or intersect, got {self.missing_policy!r}")
        if not 0.0 < self.neutral_fraction < 1.0:
            raise ConfigError("neutral_fraction must lie strictly between 0 and 1")
        if (self.down_threshold is None) != (self.up_threshold is None):
            raise ConfigError("set both down_threshold and up_threshold, or neither")
        if self.down_threshold is not None and not self.down_threshold < self.up_threshold:
            raise ConfigError("down_threshold must be below up_threshold")
        for name in ("train_days", "eval_days", "test_days", "portfolio_size", "workers", "hidden",
                     "rel_dim", "gcn_h1", "gcn_h2", "lookback", "top_k", "syn_companies", "syn_days"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.stride < 0:
            raise ConfigError("stride must be >= 0")
        if self.syn_layout not in LAYOUTS:
            raise ConfigError(f"syn_layout must be one of {', '.join(LAYOUTS)}")
        if self.syn_shocks not in ("gaussian", "ternary"):
            raise ConfigError("syn_shocks must be gaussian or ternary")

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                           dropout=self.dropout, max_epochs=self.max_epochs, patience=self.patience,
                           seeds=self.seeds, model=self.models[0], encoder=self.encoder,
                           hidden=self.hidden, rel_dim=self.rel_dim, gcn_h1=self.gcn_h1,
                           gcn_h2=self.gcn_h2, batch_days=self.batch_days, lookback=self.lookback,
                           top_k=self.top_k, portfolio_size=self.portfolio_size,
                           neutral_fraction=self.neutral_fraction, down_threshold=self.down_threshold,
                           up_threshold=self.up_threshold)

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def data_path(self, key: str, default_name: str) -> Path:
        value = getattr(self, key)
        return Path(value) if value else self.out / "data" / default_name

    def dump(self) -> str:
        return "".join(f"{k} = {_format(getattr(self, k))}\n" for k in self.keys())

    def echo(self) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / ECHO_NAME
        path.write_text(self.dump(), encoding="utf-8")
        return path


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_HINTS = typing.get_type_hints(RunConfig)


def _convert(key: str, raw: str):
    hint = _HINTS[key]
    raw = raw.strip()
    args = typing.get_args(hint)
    try:
        if isinstance(hint, types.UnionType) or typing.get_origin(hint) is typing.Union:
            if raw == "" or raw.lower() == "none":
                return None
            return next(a for a in args if a is not type(None))(raw)
        if typing.get_origin(hint) is tuple:
            item = args[0]
            return tuple(item(v.strip()) for v in raw.split(",") if v.strip())
        if hint is bool:
            return raw.lower() in ("1", "true", "yes")
        return hint(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {raw!r} ({exc})") from None


def read_config_file(path: str | Path) -> dict[str, str]:
    """``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{n}: expected 'key = value', got {line!r}")
        k, v = text.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_overrides(argv: list[str]) -> dict[str, str]:
    """``--key value`` pairs (``--key=value`` also accepted)."""
    out, i = {}, 0
    while i < len(argv):
        tok = argv[i]
        if not tok.startswith("--"):
            raise ConfigError(f"expected --key value, got {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        elif i + 1 < len(argv):
            val = argv[i + 1]
            i += 2
        else:
            raise ConfigError(f"--{key} needs a value")
        out[key.replace("-", "_")] = val
    return out


def parse_config(path: str | Path | None = None, overrides: dict[str, str] | None = None,
                 env: dict[str, str] | None = None) -> RunConfig:
    """Defaults < file < output-dir environment variable < flag overrides."""
    env = os.environ if env is None else env
    raw: dict[str, str] = {}
    if path:
        raw.update(read_config_file(path))
    if env.get(OUTPUT_ENV):
        raw["output_dir"] = env[OUTPUT_ENV]
    raw.update(overrides or {})
    valid = RunConfig.keys()
    unknown = sorted(k for k in raw if k not in valid)
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(unknown)}; valid keys: {', '.join(valid)}")
    return RunConfig(**{k: _convert(k, v) for k, v in raw.items()})
