"""End-to-end finite-difference check of the full model on a tiny configuration."""

from __future__ import annotations

import numpy as np

from .data.dataset import TrainingExample, collate
from .model import PCRNN, ModelConfig, batch_loss
from .tensor import GradCheckReport, grad_check


def micro_config() -> ModelConfig:
    """Patent/assignee/inventor widths 4/2/2, vocabulary 3, 64-bit."""
    return ModelConfig(d_patent=4, d_assignee=2, d_inventor=2, embed_dim=2, num_layers=2, vocab=3,
                       attn_dim=3, pfn_dim=5, dtype="float64")


def micro_batch(seed: int = 0, n: int = 3, l: int = 2):
    """Two examples with ``n`` observations and ``l`` targets.

    The first has an empty assignee chain, the second an empty inventor
    chain, so both null-position paths are exercised.
    """
    rng = np.random.default_rng(seed)

    def example(i, n_assignee, n_inventor):
        times = np.sort(rng.uniform(0.0, 1.0, n + l))
        cutoff = times[n - 1]
        return TrainingExample(
            patent_id=f"micro{i}",
            times=times[:n],
            cats=rng.integers(0, 3, n),
            assignee=np.sort(rng.uniform(0.0, cutoff, n_assignee)),
            inventor=np.sort(rng.uniform(0.0, cutoff, n_inventor)),
            target_times=times[n:],
            target_cats=rng.integers(0, 3, l),
            chain_length=n + l,
        )

    return collate([example(0, 0, 3), example(1, 3, 0)], np.float64)


def run_micro_gradcheck(seed: int = 0, eps: float = 1e-5, tol: float = 1e-4,
                        mode: str = "teacher_forced") -> GradCheckReport:
    model = PCRNN(micro_config(), seed=seed)
    batch = micro_batch(seed)
    return grad_check(lambda: batch_loss(model, batch, mode).total, dict(model.named_parameters()), eps, tol)
