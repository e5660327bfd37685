"""Mini-batch training loop with teacher forcing and a per-epoch loss trace."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .data.dataset import batches
from .errors import ConfigError
from .model import MODES, PCRNN, loss_and_grad
from .optim import Adam

log = logging.getLogger(__name__)

TRACE_FIELDS = ("epoch", "train_loss", "time_loss", "category_loss")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float | None = 5.0
    seed: int = 0
    mode: str = "teacher_forced"
    time_weight: float = 1.0
    lr_decay: float = 1.0

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("train.epochs and train.batch_size must be positive")
        if self.lr <= 0 or not 0 < self.lr_decay <= 1:
            raise ConfigError("train.lr must be positive and train.lr_decay in (0, 1]")
        if self.time_weight <= 0:
            raise ConfigError("train.time_weight must be positive")
        if self.clip is not None and self.clip <= 0:
            raise ConfigError("train.clip must be positive or null")
        if self.mode not in MODES:
            raise ConfigError(f"train.mode must be one of {MODES}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    time_loss: float
    category_loss: float


def make_optimizer(model: PCRNN, cfg: TrainConfig) -> Adam:
    return Adam(model.named_parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.clip)


def train(model: PCRNN, examples, cfg: TrainConfig | None = None, optimizer: Adam | None = None,
          callback=None) -> list:
    """Fit ``model`` on ``examples``; returns one :class:`EpochStats` per epoch.

    Batch order is drawn from a generator seeded with ``cfg.seed``, so two
    runs with the same seed, data and initial parameters are bit-identical.
    ``callback(stats)`` may return True to stop early.  The learning rate of
    epoch ``e`` is ``lr * lr_decay ** (e - 1)``.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    optimizer = optimizer or make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    examples = list(examples)
    dtype = model.config.np_dtype
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        optimizer.state.lr = cfg.lr * cfg.lr_decay ** (epoch - 1)
        order = rng.permutation(len(examples))
        tot = tl = cl = 0.0
        for batch in batches([examples[i] for i in order], cfg.batch_size, None, dtype):
            optimizer.zero_grad()
            terms = loss_and_grad(model, batch, cfg.mode, cfg.time_weight)
            optimizer.step()
            size = len(batch)
            tot += float(terms.total.values) * size
            tl += terms.time * size
            cl += terms.category * size
        n = len(examples)
        stats = EpochStats(epoch, tot / n, tl / n, cl / n)
        trace.append(stats)
        log.debug("epoch %d loss %.5f", epoch, stats.train_loss)
        if callback is not None and callback(stats):
            break
    return trace


def write_loss_trace(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        writer.writeheader()
        for stats in trace:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in asdict(stats).items()})


def read_loss_trace(path) -> list:
    with open(path, newline="") as fh:
        return [EpochStats(int(r["epoch"]), float(r["train_loss"]), float(r["time_loss"]),
                           float(r["category_loss"])) for r in csv.DictReader(fh)]
