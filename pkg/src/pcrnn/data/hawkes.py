"""Synthetic marked citation chains from an exponential-kernel Hawkes process.

Arrival times come from Ogata thinning with intensity
``mu + sum_{t_i < t} alpha * exp(-beta * (t - t_i))``.  Marks follow a
deterministic rule on the gap history so that categories carry structure a
model can learn.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, StationarityError
from .events import MAIN_VOCAB, SUB_VOCAB, CitationEvent, SequenceRecord

# 37 sub-categories split over the 7 main ones
SUB_SIZES = (6, 5, 5, 5, 5, 5, 6)
SUB_OFFSETS = tuple(int(x) for x in np.cumsum((0,) + SUB_SIZES[:-1]))
assert sum(SUB_SIZES) == SUB_VOCAB and len(SUB_SIZES) == MAIN_VOCAB


def hawkes_times(mu: float, alpha: float, beta: float, T: float, rng: np.random.Generator,
                 start: float = 0.0) -> np.ndarray:
    """Event times on ``[start, start + T)`` by thinning."""
    if mu < 0 or alpha < 0 or beta <= 0 or T <= 0:
        raise ContractError("need mu >= 0, alpha >= 0, beta > 0, T > 0")
    if alpha >= beta:
        raise StationarityError(f"alpha={alpha} must be below beta={beta} for a stationary process")
    if mu == 0:
        return np.zeros(0)
    times = []
    t = 0.0
    excite = 0.0  # sum of kernel terms at time t
    while True:
        bound = mu + excite  # intensity only decays until the next arrival
        w = rng.exponential(1.0 / bound)
        t += w
        if t >= T:
            break
        excite *= np.exp(-beta * w)
        if rng.random() * bound <= mu + excite:
            times.append(t)
            excite += alpha
    return start + np.asarray(times)


def burst_flip_marks(times, rng: np.random.Generator, n_main: int = MAIN_VOCAB, run: int = 3):
    """Main/sub categories from the gap history.

    The main category starts at a random id and advances by one (mod
    ``n_main``) each time ``run`` consecutive gaps fall below the running
    median gap; the counter restarts after every flip.  The sub-category
    picks slot 0 or 1 of its main category's block depending on whether the
    current gap is below the running median.
    """
    times = np.asarray(times, dtype=np.float64)
    main = int(rng.integers(n_main))
    short_run = 0
    mains, subs = [], []
    gaps = []
    for k, t in enumerate(times):
        below = False
        if k > 0:
            gaps.append(t - times[k - 1])
            below = gaps[-1] < np.median(gaps)
            short_run = short_run + 1 if below else 0
            if short_run >= run:
                main = (main + 1) % n_main
                short_run = 0
        mains.append(main)
        subs.append(SUB_OFFSETS[main % MAIN_VOCAB] + (0 if below else 1))
    return mains, subs


MARK_RULES = {"burst_flip": burst_flip_marks}


def simulate_hawkes(mu: float, alpha: float, beta: float, T: float, mark_rule="burst_flip",
                    seed=None) -> list:
    """Simulate one marked chain on ``[0, T)``; returns a list of :class:`CitationEvent`."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    times = hawkes_times(mu, alpha, beta, T, rng)
    rule = MARK_RULES[mark_rule] if isinstance(mark_rule, str) else mark_rule
    mains, subs = rule(times, rng)
    return [CitationEvent(float(t), int(m), int(s)) for t, m, s in zip(times, mains, subs)]


@dataclass
class SyntheticConfig:
    """Parameters for a synthetic corpus of patent/assignee/inventor chains.

    Each patent draws a rate multiplier shared by its three chains, so the
    auxiliary chains say something about the patent's own citation rate.
    """

    mu: float = 1.0
    alpha: float = 3.5
    beta: float = 5.0
    T: float = 10.0
    aux_T: float = 10.0
    aux_rate: float = 1.5
    rate_spread: float = 2.0
    min_len: int = 20
    max_len: int = 200
    mark_rule: str = "burst_flip"
    max_attempts: int = 1000


def simulate_dataset(count: int, config: SyntheticConfig | None = None, seed: int = 0) -> list:
    """``count`` :class:`SequenceRecord` objects with chain lengths inside the filter bounds."""
    cfg = config or SyntheticConfig()
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        scale = float(np.exp(rng.uniform(-np.log(cfg.rate_spread), np.log(cfg.rate_spread))))
        for _ in range(cfg.max_attempts):
            events = simulate_hawkes(cfg.mu * scale, cfg.alpha, cfg.beta, cfg.T, cfg.mark_rule, rng)
            if cfg.min_len <= len(events) <= cfg.max_len:
                break
        else:
            raise ContractError(f"could not draw a chain with {cfg.min_len}..{cfg.max_len} events; adjust mu/T")
        # auxiliary chains start aux_T before the patent's window
        aux_mu = cfg.mu * scale * cfg.aux_rate
        assignee = hawkes_times(aux_mu, cfg.alpha, cfg.beta, cfg.aux_T + cfg.T, rng, start=-cfg.aux_T)
        inventor = hawkes_times(aux_mu * 0.5, cfg.alpha, cfg.beta, cfg.aux_T + cfg.T, rng, start=-cfg.aux_T)
        records.append(SequenceRecord(f"SYN{i:06d}", events, assignee, inventor))
    return records
