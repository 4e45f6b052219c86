# %% [markdown]
# # Follow-the-leader vehicles
#
# Each vehicle carries mass h = 0.01 and reads density h / gap ahead of it.
# The discrete functional sums (V_i - vbar)^2 times the gap over vehicles in
# the window, so it jumps whenever a car leaves through the window's tail.

# %%
import numpy as np

from nonlocal_lwr import load_config, run_micro

run = run_micro(load_config("fig3-micro"))
d = run.diagnostics
t, lnL = d.column("t"), d.column("lnL")
print(f"{run.n_vehicles} vehicles, {run.n_steps} steps, smallest gap {run.min_gap:.4f}")
print(f"lnL(0) = {lnL[0]:.4f}   (continuum value ln(1/12) = {np.log(1 / 12):.4f})")

# %% jumps and the crossings that explain them
print(f"{len(run.jumps)} jumps, {sum(bool(j['crossings']) for j in run.jumps)} explained")
for j in run.jumps[:5]:
    c = j["crossings"][0]
    print(f"  t={j['t']:.3f}: vehicle {c.vehicle} {c.direction} at the {c.edge} edge")

# %%
print("max lnL - (lnL(0) - t):", float(np.max(lnL - lnL[0] + t)))
