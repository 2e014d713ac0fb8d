# %% [markdown]
# # Local time along a dynamical trajectory
#
# A trajectory on `B_2` is simulated, the normalised connection measure
# `mubar_2` is built from it, and the configuration seen at a point drawn from
# that measure is compared with `IIC_2` on the `B_1` window.

# %%
import numpy as np

from perclab import exact
from perclab.dynamics import connection_timeline, simulate
from perclab.lattice import ball
from perclab.measures import ThetaTable, exact_M_table, mu, mu_bar, sample_chi
from perclab.static import sample

rng = np.random.default_rng(11)
theta = ThetaTable.exact([1, 2])

# %%
traj = simulate(sample(ball(2), 0.5, rng), 2000.0, rng)
tl = connection_timeline(traj, 2)
s = mu_bar(traj, 2, theta)
print("rings:", len(traj.times), " connection pieces:", len(tl.intervals))
print("mubar_2[0, T] / T =", s.total / traj.horizon)

# %% [markdown]
# ## Configuration at a local-time point

# %%
chi = sample_chi(s, rng, 50_000)
codes = traj.window_codes(7)[np.searchsorted(traj.times, chi, side="right")]
emp = np.bincount(codes, minlength=128) / len(codes)
print("TV to IIC_2 on B_1:", exact.tv(emp, exact.iic_window_law(2, 7)))

# %% [markdown]
# ## Radial second moment over short intervals
# `E[mubar_2[0, eps]^2] / eps` for dyadic `eps`; a bounded, decreasing column
# is the expected shape.

# %%
for k in range(1, 8):
    eps = 2.0 ** -k
    vals = []
    for _ in range(4000):
        tr = simulate(sample(ball(2), 0.5, rng), eps, rng)
        vals.append(mu_bar(tr, 2, theta).total)
    vals = np.array(vals)
    print(f"eps=2^-{k}:  E[m^2]/eps = {np.mean(vals ** 2) / eps:.4f}")

# %% [markdown]
# ## `mu_1` against `mubar_2` in L^2
# Conditioning `mubar_2` on the `B_1` history gives `mu_1`, so the squared
# distance is the drop in second moment.

# %%
table = exact_M_table(1, 2)
for T in (1.0, 10.0, 100.0):
    d2, m2 = [], []
    for _ in range(400):
        tr = simulate(sample(ball(2), 0.5, rng), T, rng)
        a = mu(tr, 1, 2, table=table).total
        b = mu_bar(tr, 2, theta).total
        d2.append((a - b) ** 2)
        m2.append(b * b)
    print(f"T={T:6.1f}  E(mu_1 - mubar_2)^2 / E mubar_2^2 = {np.mean(d2) / np.mean(m2):.4f}")
