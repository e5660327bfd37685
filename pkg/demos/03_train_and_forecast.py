"""
Training a small model and reading its attention
================================================

Train a narrow model for a few epochs on synthetic chains, then forecast
the next citations of a held-out patent and print the attention weights.
"""

import numpy as np

from pcrnn.data import examples_at_fraction, normalize_times, simulate_dataset, split_records
from pcrnn.eval import score_baseline, score_model
from pcrnn.model import PCRNN, ModelConfig, suggest_gap_scale
from pcrnn.training import TrainConfig, train

# %%
# split, then fit the time normalisation on the training part only
records = simulate_dataset(60, seed=7)
train_r, test_r = split_records(records, 0.8, seed=0)
train_n, (test_n,), norm = normalize_times(train_r, test_r)
examples, _ = examples_at_fraction(train_n, 0.5)
test_ex, _ = examples_at_fraction(test_n, 0.5)
print(f"{len(examples)} training examples, {len(test_ex)} test examples, time span {norm.span:.2f}")

# %%
# gaps are small in normalised units, so the model sees them rescaled
scale = suggest_gap_scale(examples)
config = ModelConfig(d_patent=16, d_assignee=8, d_inventor=8, embed_dim=8, gap_scale=scale)
model = PCRNN(config, seed=0)
trace = train(model, examples, TrainConfig(epochs=8, batch_size=16, lr=3e-3, time_weight=scale))
for stats in trace:
    print(f"epoch {stats.epoch}: loss {stats.train_loss:.3f} "
          f"(time {stats.time_loss:.4f}, category {stats.category_loss:.3f})")

# %%
# free-running scores against the naive yardstick
got, naive = score_model(model, test_ex), score_baseline(test_ex)
print(f"model acc {got['acc']:.3f} gap-MAE {got['gap_mae']:.5f}; naive acc {naive['acc']:.3f} "
      f"gap-MAE {naive['gap_mae']:.5f}")

# %%
# five steps ahead for one patent, in the original time unit
ex = test_ex[0]
fc = model.forecast(ex, 5)
times = norm.inverse(ex.times[-1] + np.cumsum(fc.gaps[0]))
print("predicted times", np.round(times, 3))
print("true times     ", np.round(norm.inverse(ex.target_times[:5]), 3))
print("categories", fc.categories[0], "true", ex.target_cats[:5])

# %%
# second-level weights over the patent, assignee and inventor contexts
for step, beta in enumerate(fc.trace.beta):
    print(f"step {step + 1}: beta = {np.round(beta[0], 3)}")
