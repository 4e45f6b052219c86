"""Follow-the-leader particle model matching the nonlocal macroscopic dynamics.

Each vehicle carries density mass ``h``.  Between consecutive vehicles the
density is reconstructed as ``h / (x_{i+1} - x_i)``, ahead of the leader it is
``rho_bar``.  A follower drives at ``v`` of the kernel-weighted average of
that reconstruction over ``[x_i, x_i + eta]``; the leader is prescribed,
``x_M(t) = b + vbar t``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .diagnostics import (DiagnosticsRecord, DiagnosticsSeries, WindowParams, decay_rate,
                          window)
from .errors import ConfigurationError, StepSizeError
from .model import Kernel, VelocityModel
from .scenario import InitialProfile, ScenarioConfig

log = logging.getLogger(__name__)

MAX_HALVINGS = 20
STEP_SAFETY = 0.5


@dataclass(frozen=True)
class MicroState:
    """Vehicle positions in increasing order; the last one is the leader."""

    positions: np.ndarray
    h: float
    t: float
    vbar: float
    b: float

    @property
    def leader(self) -> float:
        return float(self.positions[-1])

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.positions)

    @property
    def densities(self) -> np.ndarray:
        """Reconstructed density on each gap ``[x_i, x_{i+1})``."""
        return self.h / self.gaps


def micro_init(profile: InitialProfile, h: float, b: float, x_left: float, vbar: float = 0.0,
               eta: Optional[float] = None) -> MicroState:
    """Place the leader at ``b`` and followers so every gap holds mass ``h`` of ``rho0``.

    Vehicles are added upstream until one sits at or behind ``x_left``.
    """
    if not h > 0:
        raise ConfigurationError("vehicle mass h must be positive")
    if eta is not None and h > eta:
        raise ConfigurationError(f"h={h} exceeds eta={eta}: the look-ahead would see no vehicle")
    if x_left >= b:
        raise ConfigurationError("x_left must lie upstream of b")
    pos = [b]
    m_done = 0.0        # rho0 mass between the current segment top and b
    top = b
    k = 1
    lowers = [-math.inf] + list(profile.breaks[:-1])
    # segment (lowers[s], breaks[s]] holding the points just below b
    seg = int(np.searchsorted(np.asarray(profile.breaks), b, side="left"))
    while True:
        rho = profile.values[seg]
        if rho <= 0:
            raise ConfigurationError("initial profile must be positive upstream of b")
        bottom = lowers[seg]
        seg_mass = (top - bottom) * rho if math.isfinite(bottom) else math.inf
        # vehicles whose mass coordinate k*h falls inside this segment
        while k * h <= m_done + seg_mass * (1 + 1e-14):
            x = top - (k * h - m_done) / rho
            pos.append(x)
            if x <= x_left:
                break
            k += 1
        if pos[-1] <= x_left:
            break
        m_done += seg_mass
        top = bottom
        seg -= 1
    positions = np.asarray(pos[::-1], dtype=float)
    return MicroState(positions=positions, h=float(h), t=0.0, vbar=float(vbar), b=float(b))


def micro_velocities(state: MicroState, kernel: Kernel, model: VelocityModel,
                     rhobar: float) -> np.ndarray:
    """Speeds of all vehicles; the leader's entry is ``vbar``."""
    x = state.positions
    M = len(x)
    out = np.empty(M)
    out[-1] = state.vbar
    if M == 1:
        return out
    eta = kernel.eta
    dens = state.h / np.diff(x)
    xf = x[:-1]
    if kernel.kind == "constant":
        arg = _constant_kernel_mass(x, dens, state.h, rhobar, eta) / eta
        np.clip(arg, 0.0, model.rho_max, out=arg)
        out[:-1] = model.eval(arg)
        return out
    reach = np.searchsorted(x, xf + eta, side="left")
    S = int(np.max(reach - np.arange(M - 1)))
    J = np.arange(M - 1)[:, None] + np.arange(S)[None, :]
    valid = J <= M - 2
    Jc = np.minimum(J, M - 2)
    a = np.clip(x[Jc] - xf[:, None], 0.0, eta)
    b = np.clip(x[Jc + 1] - xf[:, None], 0.0, eta)
    w = np.where(valid, kernel.segment_integral(a, b), 0.0)
    arg = np.sum(w * dens[Jc], axis=1)
    ahead = np.clip(x[-1] - xf, 0.0, eta)
    arg += rhobar * kernel.segment_integral(ahead, np.full_like(ahead, eta))
    np.clip(arg, 0.0, model.rho_max, out=arg)
    out[:-1] = model.eval(arg)
    return out


def _constant_kernel_mass(x, dens, h, rhobar, eta):
    # every full gap carries exactly h; only the gap cut by x_i + eta is partial
    M = len(x)
    i = np.arange(M - 1)
    end = x[:-1] + eta
    J = np.searchsorted(x, end, side="right") - 1
    Jg = np.minimum(J, M - 2)
    partial = np.where(J <= M - 2, dens[Jg], rhobar) * (end - x[J])
    return (J - i) * h + partial


def micro_step(state: MicroState, kernel: Kernel, model: VelocityModel, rhobar: float,
               dt: float, V: Optional[np.ndarray] = None) -> MicroState:
    """Explicit Euler step for the followers; the leader is moved analytically.

    Raises:
        StepSizeError: if two vehicles swap or touch.
    """
    if dt == 0:
        return state
    if V is None:
        V = micro_velocities(state, kernel, model, rhobar)
    t_new = state.t + dt
    new = state.positions + dt * V
    new[-1] = state.b + state.vbar * t_new
    gaps = np.diff(new)
    if np.any(gaps <= 0):
        i = int(np.argmin(gaps))
        raise StepSizeError(f"vehicles {i} and {i + 1} collide with dt={dt} at t={state.t}")
    return replace(state, positions=new, t=t_new)


def micro_lyapunov(state: MicroState, kernel: Kernel, model: VelocityModel, params: WindowParams,
                   rhobar: float, V: Optional[np.ndarray] = None) -> float:
    """``sum (V_i - vbar)^2 (x_{i+1} - x_i)`` over followers in ``[beta - eta, beta)``."""
    if V is None:
        V = micro_velocities(state, kernel, model, rhobar)
    i0, i1 = window_members(state, params)
    if i1 < i0:
        return 0.0
    idx = np.arange(i0, i1 + 1)
    gaps = state.positions[idx + 1] - state.positions[idx]
    return float(np.sum((V[idx] - params.vbar) ** 2 * gaps))


def window_members(state: MicroState, params: WindowParams) -> tuple:
    """Index range ``(first, last)`` of followers with ``x_i`` in ``[beta - eta, beta)``."""
    lo, hi = window(state.t, params)
    x = state.positions[:-1]
    first = int(np.searchsorted(x, lo, side="left"))
    last = int(np.searchsorted(x, hi, side="left")) - 1
    return first, last


def micro_dt_bound(V: np.ndarray, h: float, rho_max: float) -> float:
    vmax = float(np.max(V[:-1])) if len(V) > 1 else 0.0
    if vmax <= 0:
        return math.inf
    return STEP_SAFETY * h / (rho_max * vmax)


@dataclass
class CrossingEvent:
    t: float
    vehicle: int
    edge: str        # "left" (beta - eta) or "right" (beta)
    direction: str  # "enter" or "exit"


@dataclass
class MicroRun:
    config: ScenarioConfig
    final_state: MicroState
    diagnostics: DiagnosticsSeries
    crossings: list = field(default_factory=list)
    jumps: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)
    n_steps: int = 0
    n_vehicles: int = 0
    min_gap: float = math.inf


def _membership_events(t, before, after):
    (f0, l0), (f1, l1) = before, after
    events = []
    for i in range(f0, min(f1, l0 + 1)):
        events.append(CrossingEvent(t, i, "left", "exit"))
    for i in range(f1, min(f0, l1 + 1)):
        events.append(CrossingEvent(t, i, "left", "enter"))
    for i in range(max(l1 + 1, f0), l0 + 1):
        events.append(CrossingEvent(t, i, "right", "exit"))
    for i in range(max(l0 + 1, f1), l1 + 1):
        events.append(CrossingEvent(t, i, "right", "enter"))
    return events


def detect_jumps(t: np.ndarray, lnL: np.ndarray, factor: float = 10.0, halfwidth: int = 5) -> list:
    """Output indices ``k`` where ``lnL`` jumps between ``t[k-1]`` and ``t[k]``.

    A jump is an increment larger than ``factor`` times the local slope times
    the output spacing, the local slope being the median absolute rate over
    ``halfwidth`` increments on each side.
    """
    t = np.asarray(t, dtype=float)
    lnL = np.asarray(lnL, dtype=float)
    d = np.diff(lnL)
    dt = np.diff(t)
    rate = np.abs(d) / dt
    jumps = []
    for k in range(len(d)):
        lo, hi = max(0, k - halfwidth), min(len(d), k + halfwidth + 1)
        neigh = np.concatenate((rate[lo:k], rate[k + 1:hi]))
        neigh = neigh[np.isfinite(neigh)]
        if len(neigh) == 0 or not np.isfinite(d[k]):
            continue
        slope = float(np.median(neigh))
        if abs(d[k]) > factor * slope * dt[k]:
            jumps.append(k + 1)
    return jumps


def attribute_jumps(t: np.ndarray, jump_idx: list, crossings: list) -> list:
    """Pair each jump with the crossing events within one output interval of it."""
    t = np.asarray(t, dtype=float)
    times = np.array([c.t for c in crossings])
    out = []
    for k in jump_idx:
        lo = t[max(k - 2, 0)]
        hi = t[min(k + 1, len(t) - 1)]
        hits = [c for c, tc in zip(crossings, times) if lo <= tc <= hi] if len(times) else []
        out.append({"t": float(t[k]), "index": int(k), "crossings": hits})
    return out


def run_micro(config: ScenarioConfig, keep_trajectory: bool = False) -> MicroRun:
    """Integrate the particle model and record ``L_micro`` at every output time."""
    config.validate()
    model, kernel = config.velocity, config.kernel
    rho_bar = config.rho_bar
    grid = config.grid()
    params = WindowParams(config.b, config.vbar, config.eta)
    state = micro_init(config.profile, config.h, config.b, grid.x_left, config.vbar, config.eta)
    rho_lo = config.rho_min
    vp_max = model.vprime_max(rho_lo)
    rate = decay_rate(config.eta, vp_max, rho_lo)

    diag = DiagnosticsSeries(meta={
        "rho_bar": rho_bar, "rho_min": rho_lo, "rho_sup": config.rho_sup, "vprime_max": vp_max,
        "rate": rate, "eta": config.eta, "n_vehicles": len(state.positions), "h": config.h,
        "x_left": grid.x_left,
    })
    crossings = []
    trajectory = []
    t_out = config.output_times()
    V = micro_velocities(state, kernel, model, rho_bar)
    members = window_members(state, params)
    L0 = None
    min_gap = float(np.min(state.gaps)) if len(state.positions) > 1 else math.inf
    dens = state.densities
    run_min, run_max = float(np.min(dens)), float(np.max(dens))
    step = 0

    def record():
        nonlocal L0, run_min, run_max
        L = micro_lyapunov(state, kernel, model, params, rho_bar, V)
        if L0 is None:
            L0 = L
        diag.append(DiagnosticsRecord(t=state.t, L=L, L_bound=L0 * math.exp(rate * state.t),
                                      L_tilde=math.nan, rho_min_obs=run_min,
                                      rho_max_obs=run_max, mass_residual=0.0))
        d = state.densities
        run_min, run_max = float(np.min(d)), float(np.max(d))
        if keep_trajectory:
            trajectory.append((state.t, state.positions.copy(), V.copy()))

    record()
    for k in range(1, len(t_out)):
        target = float(t_out[k])
        while state.t < target:
            dt = min(micro_dt_bound(V, state.h, model.rho_max), target - state.t)
            for attempt in range(MAX_HALVINGS + 1):
                try:
                    new = micro_step(state, kernel, model, rho_bar, dt, V)
                    break
                except StepSizeError:
                    if attempt == MAX_HALVINGS:
                        raise
                    dt *= 0.5
            if target - new.t <= 1e-12 * max(1.0, target):
                new = replace(new, t=target,
                              positions=np.concatenate((new.positions[:-1],
                                                        [config.b + config.vbar * target])))
            state = new
            step += 1
            V = micro_velocities(state, kernel, model, rho_bar)
            now = window_members(state, params)
            if now != members:
                crossings.extend(_membership_events(state.t, members, now))
                members = now
            gaps = state.gaps
            min_gap = min(min_gap, float(np.min(gaps)))
            d = state.h / gaps
            run_min = min(run_min, float(np.min(d)))
            run_max = max(run_max, float(np.max(d)))
        record()

    t = diag.column("t")
    lnL = diag.column("lnL")
    jumps = attribute_jumps(t, detect_jumps(t, lnL), crossings)
    log.info("micro run %s: %d steps, %d vehicles", config.name, step, len(state.positions))
    return MicroRun(config, state, diag, crossings, jumps, trajectory, step,
                    len(state.positions), min_gap)
