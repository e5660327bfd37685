"""Run configuration: one JSON file, deep-merged over documented defaults.

Sections and keys (``null`` means "derive it"):

``model``
    Layer sizes (``d_patent`` 32, ``d_assignee``/``d_inventor`` 16,
    ``embed_dim`` 16, ``num_layers`` 2, ``attn_dim`` 32, ``pfn_dim`` 64),
    ``vocab`` (null: 7 for the main task, 37 for sub), ``gap_scale``
    (null: reciprocal mean training gap), ``max_len`` 200, ``dtype`` float32.
``optim``
    Adam ``lr`` 1e-3, ``beta1`` 0.9, ``beta2`` 0.999, ``eps`` 1e-8 and global
    norm ``clip`` 5.0 (null disables clipping).
``train``
    ``epochs`` 50, ``batch_size`` 32, ``mode`` teacher_forced, ``task`` main,
    ``train_fraction`` 0.8 (record-level split), ``fractions`` observation
    fractions used to cut training examples, ``horizon`` (null: predict the
    rest of each chain), ``time_weight`` 1.0 and per-epoch ``lr_decay`` 1.0.
``data``
    ``sequences``: default sequence file for train/evaluate/predict.
``ingest``
    PatentsView column mapping (``columns``), ``category_table``,
    ``min_len`` 20, ``max_len`` 200, ``delimiter``.
``simulate``
    ``count`` plus the Hawkes parameters of :class:`SyntheticConfig`.
``eval``
    ``fractions`` [0.8, 0.5, 0.3, 0.1], ``horizon``, ``batch_size`` 64.

A top-level ``seed`` (default 0) feeds every random choice.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict

from .data.events import MAIN_VOCAB, SUB_VOCAB
from .data.hawkes import SyntheticConfig
from .data.patentsview import IngestConfig
from .errors import ConfigError
from .eval import SWEEP_FRACTIONS
from .model import MODES, ModelConfig

TASKS = {"main": MAIN_VOCAB, "sub": SUB_VOCAB}


def _model_defaults() -> dict:
    out = ModelConfig().to_dict()
    out["vocab"] = None
    out["gap_scale"] = None
    return out


DEFAULTS = {
    "seed": 0,
    "model": _model_defaults(),
    "optim": {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "clip": 5.0},
    "train": {
        "epochs": 50,
        "batch_size": 32,
        "mode": "teacher_forced",
        "task": "main",
        "train_fraction": 0.8,
        "fractions": list(SWEEP_FRACTIONS),
        "horizon": None,
        "time_weight": 1.0,
        "lr_decay": 1.0,
    },
    "data": {"sequences": None},
    "ingest": asdict(IngestConfig()),
    "simulate": {"count": 600, **asdict(SyntheticConfig())},
    "eval": {"fractions": list(SWEEP_FRACTIONS), "horizon": None, "batch_size": 64},
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def merge(base: dict, update: dict, path: str = "") -> dict:
    """Recursive merge of ``update`` into a copy of ``base``; unknown keys are rejected."""
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and base[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = merge(cfg, data)
    if overrides:
        cfg = merge(cfg, overrides)
    validate(cfg)
    return cfg


def _check_fractions(values, where):
    if not isinstance(values, list) or not values:
        raise ConfigError(f"{where} must be a non-empty list")
    for f in values:
        if not isinstance(f, (int, float)) or not 0 < f < 1:
            raise ConfigError(f"{where} entries must lie in (0, 1), got {f!r}")


def validate(cfg: dict):
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {cfg['seed']!r}")
    tr = cfg["train"]
    if tr["task"] not in TASKS:
        raise ConfigError(f"train.task must be one of {sorted(TASKS)}, got {tr['task']!r}")
    if tr["mode"] not in MODES:
        raise ConfigError(f"train.mode must be one of {MODES}, got {tr['mode']!r}")
    if not 0 < tr["train_fraction"] < 1:
        raise ConfigError(f"train.train_fraction must lie in (0, 1), got {tr['train_fraction']!r}")
    for key in ("epochs", "batch_size"):
        if not isinstance(tr[key], int) or tr[key] < 1:
            raise ConfigError(f"train.{key} must be a positive integer, got {tr[key]!r}")
    if not 0 < tr["lr_decay"] <= 1 or tr["time_weight"] <= 0:
        raise ConfigError("train.lr_decay must lie in (0, 1] and train.time_weight be positive")
    _check_fractions(tr["fractions"], "train.fractions")
    _check_fractions(cfg["eval"]["fractions"], "eval.fractions")
    for section in ("train", "eval"):
        h = cfg[section]["horizon"]
        if h is not None and (not isinstance(h, int) or h < 1):
            raise ConfigError(f"{section}.horizon must be a positive integer or null, got {h!r}")
    opt = cfg["optim"]
    if opt["lr"] <= 0 or not 0 <= opt["beta1"] < 1 or not 0 <= opt["beta2"] < 1 or opt["eps"] <= 0:
        raise ConfigError(f"invalid optimizer settings {opt}")
    if opt["clip"] is not None and opt["clip"] <= 0:
        raise ConfigError(f"optim.clip must be positive or null, got {opt['clip']!r}")
    model_config(cfg, gap_scale=1.0)
    sim = cfg["simulate"]
    if not isinstance(sim["count"], int) or sim["count"] < 1:
        raise ConfigError(f"simulate.count must be a positive integer, got {sim['count']!r}")
    if not 0 <= sim["alpha"] < sim["beta"]:
        raise ConfigError("simulate.alpha must satisfy 0 <= alpha < beta (stationarity)")
    ing = cfg["ingest"]
    if not 1 <= ing["min_len"] <= ing["max_len"]:
        raise ConfigError("ingest bounds must satisfy 1 <= min_len <= max_len")


def model_config(cfg: dict, gap_scale: float | None = None) -> ModelConfig:
    """ModelConfig for ``cfg`` with derived ``vocab`` and ``gap_scale`` filled in."""
    data = dict(cfg["model"])
    task_vocab = TASKS[cfg["train"]["task"]]
    if data["vocab"] is None:
        data["vocab"] = task_vocab
    elif data["vocab"] != task_vocab:
        raise ConfigError(f"model.vocab {data['vocab']} does not match task {cfg['train']['task']!r}")
    if data["gap_scale"] is None:
        data["gap_scale"] = 1.0 if gap_scale is None else gap_scale
    return ModelConfig.from_dict(data)


def synthetic_config(cfg: dict) -> SyntheticConfig:
    sim = dict(cfg["simulate"])
    sim.pop("count")
    return SyntheticConfig(**sim)


def ingest_config(cfg: dict) -> IngestConfig:
    return IngestConfig.from_dict(cfg["ingest"])
