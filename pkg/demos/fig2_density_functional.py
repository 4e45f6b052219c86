# %% [markdown]
# # The density functional is not a Lyapunov function
#
# Same leader, but the data behind it are light (0.01 far upstream, 0.35 just
# behind).  The velocity functional still decays; the plain density functional
# int (rho - rho_bar)^2 over the window goes up for a while.

# %%
import numpy as np

from nonlocal_lwr import load_config, run_macro

run = run_macro(load_config("fig2"))
d = run.diagnostics
t, lt, lnL = d.column("t"), d.column("lnL_tilde"), d.column("lnL")

# %%
k_min = int(np.argmin(lt[t <= 0.5]))
print(f"lnL_tilde: start {lt[0]:.5f}, min {lt[k_min]:.5f} at t={t[k_min]:.2f}")
for tt in (0.2, 0.5, 1.0, 1.2):
    print(f"  t={tt:4.1f}  lnL_tilde={np.interp(tt, t, lt):.5f}  lnL={np.interp(tt, t, lnL):.4f}")
print("velocity functional non-increasing:", bool(np.all(np.diff(d.column("L")) <= 0)))

# %%
try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    plt = None

if plt is not None:
    sel = t <= 1.5
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(t[sel], lt[sel])
    ax.set_xlabel("t")
    ax.set_ylabel("ln L~(t)")
    fig.tight_layout()
    fig.savefig("fig2_density.png", dpi=120)
