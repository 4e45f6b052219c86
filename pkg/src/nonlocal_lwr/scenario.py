"""Scenario description shared by the macroscopic and microscopic solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .model import Kernel, VelocityModel, stencil_size, validate_kernel, velocity_inverse


@dataclass(frozen=True)
class InitialProfile:
    """Piecewise-constant initial density.

    Segment ``i`` covers ``(breaks[i-1], breaks[i]]``; the last break is ``inf``.
    """

    breaks: tuple
    values: tuple

    @classmethod
    def from_segments(cls, segments: Sequence[tuple]) -> "InitialProfile":
        """Build from ``(x_upper, value)`` pairs; a final ``inf`` segment is required."""
        if not segments:
            raise ConfigurationError("initial profile needs at least one segment")
        breaks = tuple(float(s[0]) for s in segments)
        values = tuple(float(s[1]) for s in segments)
        if any(b1 >= b2 for b1, b2 in zip(breaks, breaks[1:])):
            raise ConfigurationError("initial profile breakpoints must be strictly increasing")
        if not math.isinf(breaks[-1]) or breaks[-1] < 0:
            raise ConfigurationError("last initial profile segment must extend to +inf")
        return cls(breaks, values)

    @classmethod
    def constant(cls, value: float) -> "InitialProfile":
        return cls((math.inf,), (float(value),))

    @property
    def segments(self) -> list:
        return list(zip(self.breaks, self.values))

    def __call__(self, x):
        idx = np.searchsorted(np.asarray(self.breaks), np.asarray(x, dtype=float), side="left")
        return np.asarray(self.values)[idx]

    @property
    def inf(self) -> float:
        return min(self.values)

    @property
    def sup(self) -> float:
        return max(self.values)

    def cell_averages(self, edges: np.ndarray) -> np.ndarray:
        """Exact cell averages over ``[edges[i], edges[i+1]]``."""
        edges = np.asarray(edges, dtype=float)
        vals = np.asarray(self.values)
        brk = np.asarray(self.breaks)
        seg_l = np.searchsorted(brk, edges[:-1], side="left")
        seg_r = np.searchsorted(brk, edges[1:], side="left")
        out = vals[seg_l].astype(float)
        # cells cut by a breakpoint get the overlap-weighted mean
        for i in np.nonzero(seg_l != seg_r)[0]:
            lo, hi = edges[i], edges[i + 1]
            acc = 0.0
            for s in range(seg_l[i], seg_r[i] + 1):
                a = brk[s - 1] if s > 0 else -math.inf
                acc += vals[s] * max(0.0, min(hi, brk[s]) - max(lo, a))
            out[i] = acc / (hi - lo)
        return out


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of ``n_cells`` cells on ``[x_left, x_right]``."""

    x_left: float
    x_right: float
    dx: float
    n_cells: int

    def __post_init__(self):
        if self.n_cells < 1 or not self.dx > 0:
            raise ConfigurationError("grid needs dx > 0 and at least one cell")
        if abs(self.x_right - self.x_left - self.n_cells * self.dx) > 1e-12 * max(1.0, abs(self.x_right)) + 1e-12:
            raise ConfigurationError("grid extent is not n_cells * dx")

    @classmethod
    def around(cls, anchor: float, upstream: float, downstream: float, dx: float) -> "GridSpec":
        """Grid with ``anchor`` on a cell edge, covering at least the given lengths."""
        n_left = int(math.ceil(upstream / dx - 1e-9))
        n_right = int(math.ceil(downstream / dx - 1e-9))
        x_left = anchor - n_left * dx
        n = n_left + n_right
        return cls(x_left, x_left + n * dx, dx, n)

    @cached_property
    def edges(self) -> np.ndarray:
        return self.x_left + self.dx * np.arange(self.n_cells + 1)

    @cached_property
    def centers(self) -> np.ndarray:
        return self.x_left + self.dx * (np.arange(self.n_cells) + 0.5)

    def cell_index(self, x):
        """Index ``i`` with ``edges[i] <= x < edges[i+1]`` (clipped to the grid)."""
        x = np.asarray(x, dtype=float)
        i = np.floor((x - self.x_left) / self.dx).astype(int)
        i = np.clip(i, 0, self.n_cells - 1)
        e = self.x_left + self.dx * i
        i = np.where(x < e, i - 1, i)
        i = np.where(x >= self.x_left + self.dx * (i + 1), i + 1, i)
        return np.clip(i, 0, self.n_cells - 1)


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce one run.

    ``x_left`` / ``x_right`` default to ``b - v(0) t_end - 2 eta`` and
    ``b + vbar t_end + 2 eta``; see :meth:`grid`.
    """

    velocity: VelocityModel
    kernel: Kernel
    vbar: float
    b: float
    profile: InitialProfile
    dx: float = 5e-3
    t_end: float = 20.0
    cfl_factor: float = 1.0
    cadence: float = 0.1
    x_left: Optional[float] = None
    x_right: Optional[float] = None
    model: str = "macro"
    h: float = 0.01
    name: str = "custom"
    extra: dict = field(default_factory=dict)

    @property
    def eta(self) -> float:
        return self.kernel.eta

    @property
    def rho_bar(self) -> float:
        return velocity_inverse(self.velocity, self.vbar)

    @property
    def rho_min(self) -> float:
        """Infimum of the initial data; the lower end of the maximum principle."""
        return self.profile.inf

    @property
    def rho_sup(self) -> float:
        return self.profile.sup

    @property
    def n_outputs(self) -> int:
        n = self.t_end / self.cadence
        return int(round(n))

    def output_times(self) -> np.ndarray:
        n = self.n_outputs
        t = self.cadence * np.arange(n + 1)
        t[-1] = self.t_end
        return t

    def grid(self) -> GridSpec:
        eta = self.eta
        up = self.b - self.x_left if self.x_left is not None else self.velocity.v0 * self.t_end + 2 * eta
        down = self.x_right - self.b if self.x_right is not None else self.vbar * self.t_end + 2 * eta
        if up < eta:
            raise ConfigurationError(f"grid too small: need x_left <= b - eta (upstream length {up})")
        if down < self.vbar * self.t_end + 2 * eta - 1e-9:
            raise ConfigurationError(
                "grid too small: the final Lyapunov window must lie at least eta inside x_right "
                f"(need x_right >= {self.b + self.vbar * self.t_end + 2 * eta})")
        g = GridSpec.around(self.b, up, down, self.dx)
        if g.n_cells < stencil_size(eta, self.dx):
            raise ConfigurationError("grid too small: fewer cells than the kernel stencil")
        return g

    def validate(self) -> None:
        """Run all admissibility checks; raise :class:`ConfigurationError` on failure."""
        if self.model not in ("macro", "micro"):
            raise ConfigurationError(f"model must be 'macro' or 'micro', got {self.model!r}")
        v0 = self.velocity.v0
        if not 0 <= self.vbar < v0:
            raise ConfigurationError(
                f"equilibrium speed assumption violated: need 0 <= vbar < v(0) = {v0}, got "
                f"vbar = {self.vbar}; a leader at v(0) leaves no positive density floor")
        try:
            rho_bar = self.rho_bar
        except DomainError as exc:
            raise ConfigurationError(str(exc)) from exc
        vals = np.asarray(self.profile.values)
        if np.any(vals <= 0) or np.any(vals > self.velocity.rho_max):
            raise ConfigurationError(
                f"initial-data assumption violated: densities must lie in (0, {self.velocity.rho_max}]")
        # every segment reaching beyond b must carry rho_bar
        lowers = (-math.inf,) + self.profile.breaks[:-1]
        for lo, hi, val in zip(lowers, self.profile.breaks, self.profile.values):
            if hi > self.b and abs(val - rho_bar) > 1e-12:
                raise ConfigurationError(
                    f"initial-data assumption violated: rho0 must equal rho_bar={rho_bar} for "
                    f"x >= b={self.b}, but segment ({lo}, {hi}] has {val}")
        self.velocity.check_assumptions(self.rho_min)
        report = validate_kernel(self.kernel)
        if not report.passed:
            raise ConfigurationError(f"kernel assumption violated: {report}")
        if not 0 < self.cfl_factor <= 1:
            raise ConfigurationError("cfl_factor must lie in (0, 1]")
        if not (self.dx > 0 and self.t_end > 0 and self.cadence > 0):
            raise ConfigurationError("dx, t_end and cadence must be positive")
        if abs(self.n_outputs * self.cadence - self.t_end) > 1e-9 * self.t_end:
            raise ConfigurationError("t_end must be a multiple of the output cadence")
        if self.dx > self.eta:
            raise ConfigurationError("dx exceeds eta: empty stencil")
        if self.model == "micro" and not 0 < self.h <= self.eta:
            raise ConfigurationError("vehicle mass h must lie in (0, eta]")
        self.grid()
