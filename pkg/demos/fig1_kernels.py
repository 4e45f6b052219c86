# %% [markdown]
# # Decay of the velocity Lyapunov functional for three kernels
#
# A jam (rho = 1) sits behind a leader that drives at 0.5 from x = 0.  The
# functional L(t) integrates (V - vbar)^2 over the window of length eta behind
# the leader; for the constant kernel it must stay below L(0) exp(-t).

# %%
import numpy as np

from nonlocal_lwr import load_config, run_macro

runs = {k: run_macro(load_config(f"fig1-{k}")) for k in ("const", "lin", "conc")}

# %%
for k, run in runs.items():
    d = run.diagnostics
    t, lnL = d.column("t"), d.column("lnL")
    late = (t >= 12)
    slope = np.polyfit(t[late], lnL[late], 1)[0]
    print(f"{k:6s} lnL(0)={lnL[0]:8.4f}  lnL(20)={lnL[-1]:8.3f}  late slope={slope:6.3f}  "
          f"steps={run.n_steps}")

# %% the bound line uses each kernel's own L(0) and rate 2 v'_max rho_min / eta = -1
d = runs["const"].diagnostics
gap = d.column("lnL_bound") - d.column("lnL")
print("smallest distance below the bound:", gap.min())

# %%
try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    plt = None

if plt is not None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, run in runs.items():
        d = run.diagnostics
        ax.plot(d.column("t"), d.column("lnL"), label=f"{k} kernel")
    ax.plot(d.column("t"), runs["const"].diagnostics.column("lnL_bound"), "k--", label="exp. bound")
    ax.set_xlabel("t")
    ax.set_ylabel("ln L(t)")
    ax.legend()
    fig.tight_layout()
    fig.savefig("fig1_kernels.png", dpi=120)
