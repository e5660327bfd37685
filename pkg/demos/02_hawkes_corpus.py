"""
A synthetic citation corpus from a marked Hawkes process
=========================================================

Chains are drawn by thinning, and categories follow a deterministic rule on
the gap history.  This script checks the mean count against the stationary
formula and looks at one chain.
"""

import numpy as np

from pcrnn.data import SyntheticConfig, simulate_dataset
from pcrnn.data.hawkes import hawkes_times

# %%
# mean count on [0, T) against mu T / (1 - alpha / beta)
rng = np.random.default_rng(1)
mu, alpha, beta, T = 1.0, 1.0, 2.0, 50.0
counts = [hawkes_times(mu, alpha, beta, T, rng).size for _ in range(2000)]
print(f"simulated mean {np.mean(counts):.1f}, stationary value {mu * T / (1 - alpha / beta):.1f}")

# %%
# a corpus with chain lengths inside 20..200, plus assignee and inventor chains
records = simulate_dataset(5, SyntheticConfig(), seed=3)
rec = records[0]
print(rec.patent_id, "citations:", len(rec), "assignee events:", rec.assignee_events.size,
      "inventor events:", rec.inventor_events.size)

# %%
# short gaps in a row move the main category on by one
gaps = np.diff(rec.times)
print("first gaps     ", np.round(gaps[:12], 3))
print("main categories", rec.categories("main")[1:13])
print("sub categories ", rec.categories("sub")[1:13])
