"""Moving-window Lyapunov functionals, the exponential decay bound and audits.

The leader sits at ``beta(t) = b + vbar t`` and the functionals are integrals
over the window ``[beta(t) - eta, beta(t)]`` directly behind it::

    L(t)       = int (V(t, x) - vbar)^2 dx
    L_tilde(t) = int (rho(t, x) - rho_bar)^2 dx

For the constant kernel ``L(t) <= L(0) exp(2 vprime_max rho_min t / eta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DomainError, UnsupportedKernelError
from .model import Kernel, VelocityModel
from .scenario import GridSpec


@dataclass(frozen=True)
class WindowParams:
    b: float
    vbar: float
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise DomainError("eta must be positive")
        if self.vbar < 0:
            raise DomainError("vbar must be nonnegative")


def window(t: float, params: WindowParams) -> tuple:
    """``(beta(t) - eta, beta(t))``."""
    if t < 0:
        raise DomainError("t must be nonnegative")
    beta = params.b + params.vbar * t
    return beta - params.eta, beta


def window_integral(values: np.ndarray, grid: GridSpec, lo: float, hi: float) -> float:
    """Integral over ``[lo, hi]`` of the piecewise-constant cell function ``values``.

    Cells cut by the window contribute their exact overlap length.
    """
    slack = 1e-12 * max(1.0, abs(grid.x_left), abs(grid.x_right))
    if lo < grid.x_left - slack or hi > grid.x_right + slack or hi < lo:
        raise DomainError(f"window [{lo}, {hi}] not covered by grid [{grid.x_left}, {grid.x_right}]")
    if hi == lo:
        return 0.0
    i0 = int(grid.cell_index(lo))
    i1 = int(grid.cell_index(hi))
    idx = np.arange(i0, i1 + 1)
    left = grid.x_left + grid.dx * idx
    right = grid.x_left + grid.dx * (idx + 1)
    overlap = np.minimum(right, hi) - np.maximum(left, lo)
    overlap = np.maximum(overlap, 0.0)
    return float(np.dot(np.asarray(values)[idx], overlap))


def lyapunov_velocity(grid: GridSpec, V: np.ndarray, t: float, params: WindowParams) -> float:
    lo, hi = window(t, params)
    return window_integral((np.asarray(V) - params.vbar) ** 2, grid, lo, hi)


def lyapunov_density(grid: GridSpec, rho: np.ndarray, t: float, params: WindowParams,
                     rhobar: float) -> float:
    lo, hi = window(t, params)
    return window_integral((np.asarray(rho) - rhobar) ** 2, grid, lo, hi)


def decay_rate(eta: float, vprime_max: float, rho_min: float) -> float:
    """Exponent ``2 vprime_max rho_min / eta`` of the decay bound (negative)."""
    if not rho_min > 0:
        raise DomainError("rho_min must be positive; no exponential bound for vbar = v(0)")
    if not vprime_max < 0:
        raise DomainError("vprime_max must be negative")
    if not eta > 0:
        raise DomainError("eta must be positive")
    return 2.0 * vprime_max * rho_min / eta


def exp_bound(L0: float, t, eta: float, vprime_max: float, rho_min: float):
    """``L0 exp(2 vprime_max rho_min t / eta)``."""
    if L0 < 0:
        raise DomainError("L0 must be nonnegative")
    rate = decay_rate(eta, vprime_max, rho_min)
    return L0 * np.exp(rate * np.asarray(t, dtype=float))


def nonlocal_argument_R(grid: GridSpec, rho: np.ndarray, t: float, x, params: WindowParams,
                        rhobar: float, kernel: Optional[Kernel] = None):
    """Convolution argument with the density frozen at ``rhobar`` ahead of the leader.

    ``R = (int_x^beta rho dy + (x + eta - beta) rhobar) / eta`` for ``x`` in the
    window.  Only meaningful for the constant kernel.
    """
    if kernel is not None and kernel.kind != "constant":
        raise UnsupportedKernelError("R(t, x) is defined for the constant kernel only")
    lo, beta = window(t, params)
    x = np.asarray(x, dtype=float)
    tol = 1e-12 * max(1.0, abs(beta))
    if np.any(x < lo - tol) or np.any(x > beta + tol):
        raise DomainError("x must lie in the window [beta - eta, beta]")
    rho = np.asarray(rho, dtype=float)
    # local prefix integrals keep magnitudes O(eta)
    i_lo = int(grid.cell_index(float(np.min(x))))
    i_hi = int(grid.cell_index(beta))
    loc = rho[i_lo:i_hi + 1] * grid.dx
    prefix = np.concatenate(([0.0], np.cumsum(loc)))

    def cum(y):
        i = grid.cell_index(y)
        return prefix[i - i_lo] + rho[i] * (y - (grid.x_left + grid.dx * i))

    integral = cum(np.float64(beta)) - cum(x)
    integral = np.where(x >= beta, 0.0, integral)
    out = (integral + (x + params.eta - beta) * rhobar) / params.eta
    return float(out) if out.ndim == 0 else out


@dataclass
class Snapshot:
    """Density and per-cell nonlocal speed at one time.

    ``V[j]`` is the speed entering the flux across the right edge of cell ``j``.
    """

    t: float
    rho: np.ndarray
    V: np.ndarray


def _window_interior_cells(grid: GridSpec, t: float, params: WindowParams, exclude: int = 2):
    lo, hi = window(t, params)
    first = int(math.ceil((lo - grid.x_left) / grid.dx - 1e-9))
    last = int(math.floor((hi - grid.x_left) / grid.dx + 1e-9)) - 1
    return np.arange(first + exclude, last - exclude + 1)


def identity_residuals(snaps: Sequence[Snapshot], grid: GridSpec, params: WindowParams,
                       model: VelocityModel, rhobar: float, kernel: Kernel,
                       edge_cells: int = 2, band: float = 0.0) -> tuple:
    """Max defects of the window identities for ``dV/dx`` and ``dV/dt``.

    ``snaps`` holds three snapshots at ``t - delta, t, t + delta``.  Derivatives
    are centered differences; the identities compared against are::

        dV/dx = (rho_bar - rho) v'(R) / eta
        dV/dt = (rho V - vbar rho_bar) v'(R) / eta

    evaluated at the cell edges where ``V`` lives.  ``edge_cells`` cells at
    each window edge are skipped.  The density jumps at ``beta(t)``; ``band``
    additionally drops cells whose position or stencil end lies within that
    distance of ``beta(t)``, which is what a refinement study needs since the
    smeared jump spans a fixed number of cells.
    """
    if kernel.kind != "constant":
        raise UnsupportedKernelError("identity residuals need the constant kernel")
    prev, cur, nxt = snaps
    delta_m = cur.t - prev.t
    delta_p = nxt.t - cur.t
    if not (delta_m > 0 and delta_p > 0):
        raise ValueError("snapshots must be strictly increasing in time")
    cells = _window_interior_cells(grid, cur.t, params, edge_cells)
    x_edge = grid.x_left + grid.dx * (cells + 1)
    if band > 0:
        beta = params.b + params.vbar * cur.t
        keep = (np.abs(x_edge - beta) > band) & (np.abs(x_edge + params.eta - beta) > band)
        cells, x_edge = cells[keep], x_edge[keep]
    if len(cells) == 0:
        return 0.0, 0.0
    R = nonlocal_argument_R(grid, cur.rho, cur.t, x_edge, params, rhobar)
    vp = np.asarray(model.deriv(R), dtype=float)
    eta = params.eta

    dVdx = (cur.V[cells + 1] - cur.V[cells - 1]) / (2.0 * grid.dx)
    rho_edge = 0.5 * (cur.rho[cells] + cur.rho[cells + 1])
    rx = np.abs(dVdx - (rhobar - rho_edge) * vp / eta)

    dVdt = (nxt.V[cells] - prev.V[cells]) / (delta_m + delta_p)
    flux = cur.rho[cells] * cur.V[cells]
    rt = np.abs(dVdt - (flux - params.vbar * rhobar) * vp / eta)
    return float(np.max(rx)), float(np.max(rt))


# ---------------------------------------------------------------------------
# Records and audits
# ---------------------------------------------------------------------------

@dataclass
class DiagnosticsRecord:
    t: float
    L: float
    L_bound: float
    L_tilde: float
    rho_min_obs: float
    rho_max_obs: float
    mass_residual: float
    res_dxV: float = math.nan
    res_dtV: float = math.nan


CSV_HEADER = ("t", "lnL", "lnL_bound", "lnL_tilde", "rho_min_obs", "rho_max_obs",
              "mass_residual", "res_dxV", "res_dtV")


def _ln(x: float) -> float:
    return math.log(x) if x > 0 and math.isfinite(x) else math.nan


@dataclass
class DiagnosticsSeries:
    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, rec: DiagnosticsRecord) -> None:
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        if name in ("lnL", "lnL_bound", "lnL_tilde"):
            raw = self.column(name[2:])
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(raw > 0, np.log(np.where(raw > 0, raw, 1.0)), np.nan)
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def csv_rows(self) -> list:
        rows = []
        for r in self.records:
            rows.append((r.t, _ln(r.L), _ln(r.L_bound), _ln(r.L_tilde), r.rho_min_obs,
                         r.rho_max_obs, r.mass_residual, r.res_dxV, r.res_dtV))
        return rows


@dataclass
class MaxPrincipleReport:
    passed: bool
    worst_undershoot: float
    worst_overshoot: float
    rho_lo: float
    rho_hi: float


def check_max_principle(series: Iterable, rho_lo: float, rho_hi: float,
                        tol: float = 1e-12) -> MaxPrincipleReport:
    """Scan density arrays (or states/snapshots exposing ``rho``) for range violations.

    Undershoot is ``max(rho_lo - min rho, 0)`` over the series, overshoot
    analogous; the check passes iff both are within ``tol``.
    """
    under = 0.0
    over = 0.0
    for item in series:
        arr = np.asarray(getattr(item, "rho", item), dtype=float)
        if not np.all(np.isfinite(arr)):
            return MaxPrincipleReport(False, math.inf, math.inf, rho_lo, rho_hi)
        under = max(under, rho_lo - float(np.min(arr)))
        over = max(over, float(np.max(arr)) - rho_hi)
    return MaxPrincipleReport(under <= tol and over <= tol, under, over, rho_lo, rho_hi)


@dataclass
class FluxLog:
    """Per-step bookkeeping of the flux-form update."""

    t: list = field(default_factory=list)
    dt: list = field(default_factory=list)
    f_in: list = field(default_factory=list)
    f_out: list = field(default_factory=list)
    mass_before: list = field(default_factory=list)
    mass_after: list = field(default_factory=list)
    rho_min: list = field(default_factory=list)
    rho_max: list = field(default_factory=list)

    def append(self, t, dt, f_in, f_out, mass_before, mass_after, rho_min, rho_max):
        self.t.append(t)
        self.dt.append(dt)
        self.f_in.append(f_in)
        self.f_out.append(f_out)
        self.mass_before.append(mass_before)
        self.mass_after.append(mass_after)
        self.rho_min.append(rho_min)
        self.rho_max.append(rho_max)

    def __len__(self):
        return len(self.dt)

    def as_arrays(self) -> dict:
        return {f.name: np.asarray(getattr(self, f.name), dtype=float) for f in fields(self)}

    def extremes(self) -> list:
        """Per-step ``(min, max)`` pairs, usable with :func:`check_max_principle`."""
        return [np.array(p) for p in zip(self.rho_min, self.rho_max)]


@dataclass
class MassReport:
    passed: bool
    step_defects: np.ndarray
    cumulative_residual: float
    total_mass: float
    rel_tol: float

    @property
    def worst_step_defect(self) -> float:
        return float(np.max(np.abs(self.step_defects))) if len(self.step_defects) else 0.0


def check_mass(log: FluxLog, rel_tol: float = 1e-9) -> MassReport:
    """Compare mass changes against the time-integrated boundary fluxes."""
    a = log.as_arrays()
    if len(a["dt"]) == 0:
        return MassReport(True, np.zeros(0), 0.0, 0.0, rel_tol)
    defects = (a["mass_after"] - a["mass_before"]) - a["dt"] * (a["f_in"] - a["f_out"])
    cumulative = float(np.sum(defects))
    total = float(max(abs(a["mass_before"][0]), 1e-300))
    ok = abs(cumulative) <= rel_tol * total and np.all(np.abs(defects) <= rel_tol * total)
    return MassReport(bool(ok), defects, cumulative, total, rel_tol)
