# %% [markdown]
# # Exact laws on small balls
#
# Everything here is computed by enumerating all states of a small ball, so
# the numbers are exact and serve as references for the Monte Carlo code.

# %%
import numpy as np

from perclab import exact
from perclab.lattice import ball_index
from perclab.spectrum import (crossing_table, decorrelation_exact, pivotal_moments,
                              spectral_size_moments, walsh_transform)

# %% [markdown]
# ## One-arm probabilities
# `ball_table(R)` returns, for every state of `B_R`, whether the origin reaches
# distance `R` and how many pivotal cells that event has.

# %%
for R in (0, 1, 2):
    print(f"theta({R}) = {exact.exact_theta(R):.10f}  (|B_{R}| = {ball_index(R).n})")
print("63/128 =", 63 / 128)

# %% [markdown]
# ## Window laws of the conditioned measures
# Law of the 7 cells of `B_1` under `IIC_2` and under its pivotal-size-biased
# version.  Opening the origin is forced in both.

# %%
iic = exact.iic_window_law(2, 7)
iicp = exact.iic_prime_window_law(2, 7)
print("P(origin open) under IIC_2:", iic[1::2].sum())
print("TV(IIC_2, IIC'_2) on B_1:", exact.tv(iic, iicp))
conn, npiv = exact.ball_table(2)
print("E[|Piv| | 0 <-> 2] =", npiv[conn].mean())

# %% [markdown]
# ## Martingale check
# Averaging `M_2` over the states outside `B_1` gives back `M_1`.

# %%
M1 = exact.exact_M(1, 2)
print("max deviation:", np.abs(exact.conditional_mean(exact.exact_M_bar(2), 7) - M1).max())
print("M_1 range:", M1.min(), M1.max())

# %% [markdown]
# ## Spectral sample of a crossing event
# First two moments of the spectral sample size match those of the pivotal
# count.

# %%
for L in (3, 4):
    tab = crossing_table(L)
    spec = walsh_transform(tab, L * L)
    print(L, spectral_size_moments(spec), pivotal_moments(tab, L * L))
    print("  size law:", np.round(spec.size_law(), 4))

# %%
spec = walsh_transform(crossing_table(4), 16)
for t in (0.0, 0.1, 0.5, 1.0, 2.0, 4.0):
    print(f"t={t:4.1f}  E[f(w_0) f(w_t)] = {decorrelation_exact(spec, spec, t):.6f}")
