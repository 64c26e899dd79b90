"""
Character-level randomized response
===================================

Each printable character of a prompt is kept with probability 1 - gamma and
otherwise swapped for one of the other 93 printable ASCII characters. Word
boundaries and lengths survive, which is what lets a language model guess
the ordinary words back.
"""

# %%
import math

import numpy as np

from promptdp import PerturbationParams, gamma_from_epsilon, perturb_document, verify_dp_ratio
from promptdp.mechanism import perturb_indices
from promptdp.text import AnnotatedDocument

# %% gamma shrinks quickly once epsilon passes ln(93)
for eps in (1, 2, 4, math.log(93), 5.5, 8, 10):
    print(f"eps={eps:5.2f}  gamma={gamma_from_epsilon(eps, 94):.4f}")

# %% the same note at a few privacy levels; fixed seed so the output is replayable
note = AnnotatedDocument.from_text("demo", "Please call a doctor if Harlan gets worse.")
for eps in (2.0, 5.5, 10.0):
    pd = perturb_document(note, PerturbationParams(eps, 94, seed=7))
    print(f"{eps:4}: {pd.perturbed_text}")

# %% the worst-case likelihood ratio over all input pairs is exactly e^eps
rep = verify_dp_ratio(PerturbationParams(5.5, 94, 0))
print(rep.max_ratio, math.exp(5.5), rep.relative_error)

# %% empirical replacement rate over a million characters
p = PerturbationParams(5.5, 94, 0)
rng = np.random.default_rng(0)
x = rng.integers(0, 94, 10**6)
out, flipped = perturb_indices(x, p.gamma, 94, rng)
print(flipped.mean(), p.gamma)
