"""
Dictionary words versus random strings
======================================

The offline restorer snaps every token to the nearest same-length English
word. On real words it climbs far above the chance curve as epsilon grows.
On random strings it has nothing to work with, so those come back only when
k-RR happened to leave them alone.
"""

# %%
import math

import numpy as np

from promptdp import RestorerConfig, sweep
from promptdp.evaluation import reports_to_csv
from promptdp.synthetic import mixed_corpus

docs = mixed_corpus(1000, np.random.default_rng(1))
print(docs[0].raw_text)

# %%
reports = sweep(docs, [3.0, 4.0, 5.0, 5.5, 6.0, 7.0, 8.0, 10.0], RestorerConfig(), seed=1)
for r in reports:
    b = r.sensitive_baseline_prob
    se = 100 * math.sqrt((b / 100) * (1 - b / 100) / r.counts["sensitive"])
    print(f"eps={r.epsilon:4.1f}  words={r.non_sensitive_rate:5.1f}%  random={r.sensitive_rate:5.1f}%"
          f"  chance={b:5.1f}% (se {se:.2f})")

# %% the same numbers as the CSV the sweep subcommand writes
print(reports_to_csv(reports))
