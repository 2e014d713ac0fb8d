# %% [markdown]
# # Exponent estimates at small scale
#
# Reduced-trial versions of the experiments run by `perclab`; the full-size
# runs live in the acceptance suite.

# %%
import numpy as np

from perclab.experiments import (exp_arm_exponents, exp_centre_cannot_hold, exp_collapse,
                                 exp_pivotal_scale, exp_volume_exponent)

# %%
f1, f4 = exp_arm_exponents([8, 16, 32, 64], 20_000, 1)
print(f"one-arm slope {f1.slope:.3f} +- {f1.slope_se:.3f}   (5/48 = {5 / 48:.3f})")
print(f"four-arm slope {f4.slope:.3f} +- {f4.slope_se:.3f}  (5/4)")
for row in f4.rows():
    print(row)

# %% [markdown]
# Pivotal counts of the annulus crossing and of the box crossing.

# %%
for event in ("annulus", "box"):
    sc = exp_pivotal_scale([8, 16, 32], 500, 2, event=event)
    print(event, np.round(sc.means, 2), "crossing", np.round(sc.crossing, 4))

# %%
print(exp_centre_cannot_hold([8, 16], 2000, 3))

# %%
res = exp_collapse(64, [2.0 ** -k for k in range(7, 1, -1)], 20, 4)
print("mean chi_t:", np.round(res.mean_chi, 1), " slope", round(res.fit.slope, 3))

# %%
vol = exp_volume_exponent(32, [2, 4, 8, 16], 500, 5)
print("volume slope", round(vol.fit.slope, 3), " target", 2 - 5 / 48)
