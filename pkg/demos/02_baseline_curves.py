"""
How often does chance alone restore a word?
===========================================

A uniformly random word of n characters survives k-RR untouched with
probability (1 - gamma)^n. Allowing a fraction alpha of wrong characters
turns this into a binomial tail. Anything a restorer achieves on random
strings beyond this curve would be a privacy failure.
"""

# %%
from promptdp import gamma_from_epsilon, log_likelihood_ratio
from promptdp.theory import baseline_curve, epsilon_grid

grid = epsilon_grid(1.0, 10.0, 0.5)

# %% six-character words, exact and relaxed matching
exact = baseline_curve({6: 1}, 0.0, grid)
loose = baseline_curve({6: 1}, 1 / 6, grid)
for (e, g, p0), (_, _, p1) in zip(exact.rows, loose.rows):
    print(f"eps={e:4.1f} gamma={g:.3f}  exact={p0:.4f}  one-off={p1:.4f}")

# %% a mixed-length histogram, the shape a real corpus has
hist = {2: 40, 4: 120, 6: 90, 8: 50, 11: 10}
print(baseline_curve(hist, 0.0, grid).to_csv())

# %% the log-likelihood ratio of "nothing changed" against "all changed" turns positive at ln 93
for eps in (4.0, 4.53, 4.54, 5.5):
    print(eps, round(log_likelihood_ratio(6, gamma_from_epsilon(eps, 94)), 4))

# %% plot if matplotlib is around
try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None
if plt is not None:
    fig, ax = plt.subplots()
    ax.plot(grid, [p for _, _, p in exact.rows], label="alpha = 0")
    ax.plot(grid, [p for _, _, p in loose.rows], label="alpha = 1/6")
    ax.set_xlabel("epsilon per character")
    ax.set_ylabel("P[random 6-char word restored]")
    ax.legend()
    fig.savefig("baseline_curves.png", dpi=120)
