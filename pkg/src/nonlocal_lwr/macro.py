"""Upwind finite-volume solver for the nonlocal LWR model behind a controlled leader.

One step of the scheme on cells ``j = 0..N-1``::

    V_j     = v(sum_k gamma_k rho_{j+k+1})
    F_{j+½} = V_j rho_j
    rho_j  <- rho_j - dt/dx (F_{j+½} - F_{j-½})

Cells beyond the right edge read the equilibrium density ``rho_bar`` (the
leader's control); the inflow ``F_{-½}`` uses a constant far-field ghost
``rho0(x_left)`` with a speed computed from the stencil starting at cell 0.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .diagnostics import (DiagnosticsRecord, DiagnosticsSeries, FluxLog, Snapshot,
                          WindowParams, decay_rate, identity_residuals, lyapunov_density,
                          lyapunov_velocity)
from .errors import ConfigurationError, MaxPrincipleViolation, NonlocalLWRError
from .model import VelocityModel, WeightTable, kernel_weights
from .scenario import GridSpec, ScenarioConfig

log = logging.getLogger(__name__)

#: relative slack when aborting on densities outside (0, rho_max]
ABORT_SLACK = 1e-12


@dataclass(frozen=True)
class MacroState:
    rho: np.ndarray
    t: float
    left_ghost: float
    right_ghost: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.rho)):
            raise NonlocalLWRError("density contains non-finite values")

    @property
    def n_cells(self) -> int:
        return len(self.rho)


def _stencil_velocities(rho: np.ndarray, right_ghost: float, gamma: np.ndarray,
                        model: VelocityModel) -> np.ndarray:
    """Speeds ``[V_{-1}, V_0, ..., V_{N-1}]`` (length ``N + 1``)."""
    K = len(gamma)
    padded = np.concatenate((rho, np.full(K, right_ghost)))
    arg = np.correlate(padded, gamma, mode="valid")
    # a weighted mean of admissible densities; clip roundoff past rho_max
    np.minimum(arg, model.rho_max, out=arg)
    return np.asarray(model.eval(arg), dtype=float)


def nonlocal_velocities(state: MacroState, weights: WeightTable, model: VelocityModel) -> tuple:
    """Per-cell speeds ``V_j`` and the left ghost speed ``V_{-1}``.

    Returns:
        ``(V, V_left)`` with ``V`` of length ``n_cells``.
    """
    V = _stencil_velocities(state.rho, state.right_ghost, weights.gamma, model)
    return V[1:], float(V[0])


def cfl_dt(velocities, dx: float, cfl_factor: float = 1.0, v0: float = 1.0,
           margin: float = 0.0) -> float:
    """``cfl_factor * dx / (max V + margin)``, capped at ``10 dx / v0``.

    The cap only engages for near-jammed states with ``max V < v0 / 10``.
    ``margin`` is an extra speed added to ``max V``; see :func:`stability_margin`.
    """
    V = np.asarray(velocities, dtype=float)
    if not np.all(np.isfinite(V)):
        raise NonlocalLWRError("non-finite velocity")
    if np.any(V < 0):
        raise NonlocalLWRError(f"negative velocity {float(np.min(V))}: speed law violated")
    if not 0 < cfl_factor <= 1:
        raise ConfigurationError("cfl_factor must lie in (0, 1]")
    speed = (float(np.max(V)) if V.size else 0.0) + margin
    cap = 10.0 * dx / v0
    if speed <= 0:
        return cap
    return min(cfl_factor * dx / speed, cap)


def stability_margin(weights: WeightTable, model: VelocityModel, rho_sup: float) -> float:
    """``gamma_0 max|v'| rho_sup``: the speed to add to ``max V`` for a monotone step.

    With ``dt = dx / max V`` alone the update is a pure shift at the leader's
    front and an overshoot above ``sup rho0`` grows there.
    """
    grid = np.linspace(0.0, model.rho_max, 1001)
    slope = float(np.max(np.abs(model.deriv(grid))))
    return float(weights.gamma[0]) * slope * rho_sup


def _check_range(rho: np.ndarray, rho_max: float, t: float, step: Optional[int]) -> None:
    bad = (rho <= 0) | (rho > rho_max * (1 + ABORT_SLACK)) | ~np.isfinite(rho)
    if np.any(bad):
        j = int(np.argmax(bad))
        raise MaxPrincipleViolation(
            f"density {rho[j]!r} outside (0, {rho_max}] in cell {j} at t={t} (step {step})",
            cell=j, step=step)


def _advance(rho: np.ndarray, V_all: np.ndarray, left_ghost: float, dt: float, dx: float):
    F = V_all * np.concatenate(([left_ghost], rho))
    new = rho - (dt / dx) * (F[1:] - F[:-1])
    return new, float(F[0]), float(F[-1])


def godunov_step(state: MacroState, weights: WeightTable, model: VelocityModel, dt: float,
                 step: Optional[int] = None) -> MacroState:
    """One explicit flux-form update of length ``dt``."""
    V_all = _stencil_velocities(state.rho, state.right_ghost, weights.gamma, model)
    new, _, _ = _advance(state.rho, V_all, state.left_ghost, dt, weights.dx)
    _check_range(new, model.rho_max, state.t + dt, step)
    return replace(state, rho=new, t=state.t + dt)


@dataclass
class MacroRun:
    config: ScenarioConfig
    grid: GridSpec
    weights: WeightTable
    final_state: MacroState
    diagnostics: DiagnosticsSeries
    flux_log: FluxLog
    snapshots: list = field(default_factory=list)
    n_steps: int = 0

    @property
    def total_mass0(self) -> float:
        return self.flux_log.mass_before[0] if len(self.flux_log) else math.nan


def initial_state(config: ScenarioConfig, grid: GridSpec) -> MacroState:
    rho0 = config.profile.cell_averages(grid.edges)
    left = float(config.profile(grid.x_left))
    return MacroState(rho=rho0, t=0.0, left_ghost=left, right_ghost=config.rho_bar)


def run_macro(config: ScenarioConfig, keep_snapshots: bool = False,
              snapshot_callback: Optional[Callable[[GridSpec, Snapshot], None]] = None) -> MacroRun:
    """Integrate ``config`` to ``t_end`` and record diagnostics at every output time.

    Time steps follow the CFL bound and are clipped to land exactly on output
    times.  Identity residuals (constant kernel only) use the neighbouring
    output snapshots as the time stencil, so the first and last records keep
    ``nan`` there.
    """
    config.validate()
    grid = config.grid()
    weights = kernel_weights(config.kernel, config.dx)
    model = config.velocity
    rho_bar = config.rho_bar
    params = WindowParams(config.b, config.vbar, config.eta)
    rho_lo = config.rho_min
    vp_max = model.vprime_max(rho_lo)
    rate = decay_rate(config.eta, vp_max, rho_lo)
    v0 = model.v0
    dx = grid.dx
    margin = stability_margin(weights, model, config.rho_sup)

    state = initial_state(config, grid)
    rho = state.rho
    diag = DiagnosticsSeries(meta={
        "rho_bar": rho_bar, "rho_min": rho_lo, "rho_sup": config.rho_sup,
        "vprime_max": vp_max, "rate": rate, "eta": config.eta, "n_cells": grid.n_cells,
        "K": weights.K, "tail_mass": weights.tail_mass, "left_ghost": state.left_ghost,
        "x_left": grid.x_left, "x_right": grid.x_right, "cfl_margin": margin,
    })
    flux_log = FluxLog()
    snapshots = []
    window3 = deque(maxlen=3)
    constant_kernel = config.kernel.kind == "constant"

    t_out = config.output_times()
    t = 0.0
    k_next = 1
    step = 0
    V_all = _stencil_velocities(rho, rho_bar, weights.gamma, model)
    mass = float(np.sum(rho) * dx)
    run_min = float(np.min(rho))
    run_max = float(np.max(rho))
    cum_residual = 0.0
    L0 = None

    def record(t_now):
        nonlocal L0, run_min, run_max
        snap = Snapshot(t_now, rho.copy(), V_all[1:].copy())
        L = lyapunov_velocity(grid, snap.V, t_now, params)
        if L0 is None:
            L0 = L
        diag.append(DiagnosticsRecord(
            t=t_now, L=L, L_bound=L0 * math.exp(rate * t_now),
            L_tilde=lyapunov_density(grid, rho, t_now, params, rho_bar),
            rho_min_obs=run_min, rho_max_obs=run_max, mass_residual=cum_residual))
        run_min = float(np.min(rho))
        run_max = float(np.max(rho))
        if keep_snapshots:
            snapshots.append(snap)
        if snapshot_callback is not None:
            snapshot_callback(grid, snap)
        window3.append(snap)
        if constant_kernel and len(window3) == 3:
            rx, rt = identity_residuals(tuple(window3), grid, params, model, rho_bar, config.kernel)
            diag.records[-2].res_dxV = rx
            diag.records[-2].res_dtV = rt

    record(0.0)
    while k_next < len(t_out):
        target = float(t_out[k_next])
        dt = cfl_dt(V_all, dx, config.cfl_factor, v0, margin)
        hit = t + dt >= target - 1e-12 * max(1.0, target)
        if hit:
            dt = target - t
        new, f_in, f_out = _advance(rho, V_all, state.left_ghost, dt, dx)
        step += 1
        t_new = target if hit else t + dt
        _check_range(new, model.rho_max, t_new, step)
        new_mass = float(np.sum(new) * dx)
        lo, hi = float(np.min(new)), float(np.max(new))
        flux_log.append(t_new, dt, f_in, f_out, mass, new_mass, lo, hi)
        cum_residual += (new_mass - mass) - dt * (f_in - f_out)
        run_min = min(run_min, lo)
        run_max = max(run_max, hi)
        rho, mass, t = new, new_mass, t_new
        V_all = _stencil_velocities(rho, rho_bar, weights.gamma, model)
        if hit:
            record(t)
            k_next += 1

    final = MacroState(rho=rho, t=t, left_ghost=state.left_ghost, right_ghost=rho_bar)
    log.info("run %s: %d steps, %d cells", config.name, step, grid.n_cells)
    return MacroRun(config, grid, weights, final, diag, flux_log, snapshots, step)
