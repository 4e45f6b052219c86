"""Speed laws, look-ahead kernels and the cell weights of the discrete convolution.

The nonlocal velocity of the model is ``V = v(W * rho)`` where the kernel ``W``
looks a distance ``eta`` downstream.  On a grid of spacing ``dx`` the
convolution becomes a finite sum with the exact cell integrals of ``W`` as
weights::

    gamma_k = int_{k dx}^{(k+1) dx} W(s) ds,    k = 0, ..., floor(eta/dx) - 1
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

from .errors import ConfigurationError, ControlInfeasibleError, DomainError

ArrayFunc = Callable[[np.ndarray], np.ndarray]

#: number of samples used to bound v' from above for non-linear laws
VPRIME_SAMPLES = 10_000
#: bisection budget for inverting non-linear laws
BISECTION_ITERATIONS = 200


# ---------------------------------------------------------------------------
# Velocity laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VelocityModel:
    """A strictly decreasing speed law ``v`` on ``[0, rho_max]``.

    Attributes:
        kind: ``"linear"`` or ``"custom"``.
        rho_max: jam density.
        func: vectorized ``rho -> v(rho)``.
        deriv_func: vectorized ``rho -> v'(rho)``.
        params: serializable description, used to echo configs.
    """

    kind: str
    rho_max: float
    func: ArrayFunc = field(repr=False, compare=False)
    deriv_func: ArrayFunc = field(repr=False, compare=False)
    params: dict = field(default_factory=dict)

    @classmethod
    def linear(cls, vmax: float = 1.0, rho_max: float = 1.0) -> "VelocityModel":
        """Greenshields law ``v(rho) = vmax (1 - rho/rho_max)``."""
        if vmax <= 0 or rho_max <= 0:
            raise ConfigurationError("linear speed law needs vmax > 0 and rho_max > 0")
        slope = -vmax / rho_max
        return cls(
            kind="linear",
            rho_max=float(rho_max),
            func=lambda rho: vmax * (1.0 - np.asarray(rho) / rho_max),
            deriv_func=lambda rho: np.full(np.shape(rho), slope),
            params={"kind": "linear", "vmax": float(vmax), "rho_max": float(rho_max)},
        )

    @classmethod
    def power(cls, exponent: float, vmax: float = 1.0, rho_max: float = 1.0) -> "VelocityModel":
        """``v(rho) = vmax (1 - (rho/rho_max)**exponent)``; a smooth custom law."""
        if exponent <= 0:
            raise ConfigurationError("power law exponent must be positive")
        if exponent == 1:
            return cls.linear(vmax, rho_max)

        def func(rho):
            return vmax * (1.0 - (np.asarray(rho) / rho_max) ** exponent)

        def deriv(rho):
            return -vmax * exponent / rho_max * (np.asarray(rho) / rho_max) ** (exponent - 1)

        return cls.custom(func, deriv, rho_max,
                          params={"kind": "power", "vmax": float(vmax),
                                  "rho_max": float(rho_max), "exponent": float(exponent)})

    @classmethod
    def custom(cls, func: ArrayFunc, deriv: ArrayFunc, rho_max: float,
               params: Optional[dict] = None) -> "VelocityModel":
        """Wrap a smooth user law.  ``deriv`` must be the exact derivative."""
        if rho_max <= 0:
            raise ConfigurationError("rho_max must be positive")
        return cls(kind="custom", rho_max=float(rho_max), func=func, deriv_func=deriv,
                   params=dict(params or {"kind": "custom", "rho_max": float(rho_max)}))

    def eval(self, rho):
        return self.func(rho)

    def deriv(self, rho):
        return self.deriv_func(rho)

    @property
    def v0(self) -> float:
        """Free-flow speed ``v(0)``."""
        return float(self.func(np.float64(0.0)))

    def vprime_max(self, rho_min: float) -> float:
        """Upper bound of ``v'`` over ``[rho_min, rho_max]``.

        Exact for the linear law.  Otherwise the derivative is sampled densely
        and, when the sampled maximum sits strictly inside the interval, polished
        by a bounded scalar search between the neighbouring samples so the bound
        is not undercut by the sampling resolution.
        """
        if not 0 <= rho_min <= self.rho_max:
            raise DomainError(f"rho_min={rho_min} outside [0, {self.rho_max}]")
        if self.kind == "linear":
            return float(self.deriv_func(np.float64(rho_min)))
        grid = np.linspace(rho_min, self.rho_max, VPRIME_SAMPLES)
        d = np.asarray(self.deriv_func(grid), dtype=float)
        i = int(np.argmax(d))
        best = float(d[i])
        if 0 < i < len(grid) - 1:
            res = optimize.minimize_scalar(lambda r: -float(self.deriv_func(np.float64(r))),
                                           bounds=(grid[i - 1], grid[i + 1]), method="bounded",
                                           options={"xatol": 1e-14})
            best = max(best, -float(res.fun))
        return best

    def check_assumptions(self, rho_min: float, samples: int = 1001) -> None:
        """Raise :class:`ConfigurationError` unless ``v`` is an admissible speed law.

        Checks strict decrease on ``[0, rho_max]``, ``v(rho_max) >= 0`` and a
        strictly negative derivative bound on ``[rho_min, rho_max]``.
        """
        grid = np.linspace(0.0, self.rho_max, samples)
        vals = np.asarray(self.func(grid), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ConfigurationError("speed law: non-finite values on [0, rho_max]")
        if np.any(np.diff(vals) >= 0):
            raise ConfigurationError("speed law assumption violated: v must be strictly decreasing")
        if vals[-1] < 0:
            raise ConfigurationError("speed law assumption violated: v(rho_max) must be >= 0")
        if self.vprime_max(rho_min) >= 0:
            raise ConfigurationError(
                "speed law assumption violated: v' must be bounded by a negative constant "
                f"on [{rho_min}, {self.rho_max}]")


def velocity(model: VelocityModel, rho):
    """Evaluate the speed law with a range check on ``rho``."""
    arr = np.asarray(rho, dtype=float)
    if np.any(arr < 0) or np.any(arr > model.rho_max) or not np.all(np.isfinite(arr)):
        raise DomainError(f"density outside [0, {model.rho_max}]")
    out = model.eval(arr)
    return float(out) if np.ndim(out) == 0 else out


def velocity_inverse(model: VelocityModel, vbar: float) -> float:
    """Equilibrium density ``rho_bar`` with ``v(rho_bar) = vbar``.

    Raises:
        ControlInfeasibleError: if ``vbar >= v(0)``; a leader at free-flow speed
            leaves a vacuum behind it and no positive density floor exists.
        DomainError: if ``vbar < v(rho_max)``.
    """
    v0 = model.v0
    vjam = float(model.eval(np.float64(model.rho_max)))
    if vbar >= v0:
        raise ControlInfeasibleError(
            f"vbar={vbar} must be strictly below the free-flow speed v(0)={v0}")
    if vbar < vjam:
        raise DomainError(f"vbar={vbar} below v(rho_max)={vjam}")
    if vbar == vjam:
        return model.rho_max
    if model.kind == "linear":
        return model.rho_max * (1.0 - vbar / model.params["vmax"])

    lo, hi = 0.0, model.rho_max
    for _ in range(BISECTION_ITERATIONS):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if float(model.eval(np.float64(mid))) > vbar:
            lo = mid
        else:
            hi = mid
    # pick the closer end of the final bracket
    if abs(float(model.eval(np.float64(lo))) - vbar) < abs(float(model.eval(np.float64(hi))) - vbar):
        return lo
    return hi


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Kernel:
    """Look-ahead weight density on ``[0, eta]``.

    ``antiderivative(s) = int_0^s W`` is used for exact segment integrals.  For
    the built-in kinds it is closed form; custom kernels fall back to adaptive
    quadrature.
    """

    kind: str
    eta: float
    density: ArrayFunc = field(repr=False, compare=False)
    antiderivative_func: Optional[ArrayFunc] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigurationError(f"nonlocal reach eta must be positive, got {self.eta}")

    @classmethod
    def constant(cls, eta: float = 1.0) -> "Kernel":
        return cls("constant", float(eta),
                   lambda x: np.full(np.shape(x), 1.0 / eta),
                   lambda s: np.asarray(s, dtype=float) / eta)

    @classmethod
    def linear(cls, eta: float = 1.0) -> "Kernel":
        """``W(x) = 2 (eta - x) / eta**2``."""
        return cls("linear", float(eta),
                   lambda x: 2.0 * (eta - np.asarray(x)) / eta**2,
                   lambda s: (2.0 * eta * np.asarray(s) - np.asarray(s) ** 2) / eta**2)

    @classmethod
    def concave(cls, eta: float = 1.0) -> "Kernel":
        """``W(x) = 3 (eta**2 - x**2) / (2 eta**3)``."""
        return cls("concave", float(eta),
                   lambda x: 3.0 * (eta**2 - np.asarray(x) ** 2) / (2.0 * eta**3),
                   lambda s: (3.0 * eta**2 * np.asarray(s) - np.asarray(s) ** 3) / (2.0 * eta**3))

    @classmethod
    def custom(cls, density: ArrayFunc, eta: float,
               antiderivative: Optional[ArrayFunc] = None) -> "Kernel":
        return cls("custom", float(eta), density, antiderivative)

    @classmethod
    def from_name(cls, name: str, eta: float = 1.0) -> "Kernel":
        key = KERNEL_ALIASES.get(name.lower())
        if key is None:
            raise ConfigurationError(
                f"unknown kernel {name!r}; expected one of {sorted(set(KERNEL_ALIASES.values()))}")
        return getattr(cls, key)(eta)

    def cdf(self, s):
        """``int_0^s W`` with ``s`` clipped to ``[0, eta]``; vectorized."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.eta)
        if self.antiderivative_func is not None:
            return self.antiderivative_func(s)
        quad = np.vectorize(lambda u: integrate.quad(self.density, 0.0, u,
                                                     epsabs=1e-13, epsrel=1e-13)[0])
        return quad(s)

    def segment_integral(self, a, b):
        """``int_a^b W`` for ``0 <= a <= b <= eta``, vectorized, cancellation free."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        eta = self.eta
        w = b - a
        if self.kind == "constant":
            return w / eta
        if self.kind == "linear":
            return w * (2.0 * eta - (a + b)) / eta**2
        if self.kind == "concave":
            return w * (3.0 * eta**2 - (b * b + a * b + a * a)) / (2.0 * eta**3)
        if self.antiderivative_func is not None:
            return self.antiderivative_func(b) - self.antiderivative_func(a)
        quad = np.vectorize(lambda lo, hi: integrate.quad(self.density, lo, hi,
                                                          epsabs=1e-12, epsrel=1e-12)[0])
        return quad(a, b)


KERNEL_ALIASES = {
    "constant": "constant", "const": "constant", "const.": "constant",
    "linear": "linear", "lin": "linear", "lin.": "linear",
    "concave": "concave", "conc": "concave", "conc.": "concave",
}


@dataclass(frozen=True)
class WeightTable:
    """Discrete convolution weights on a grid of spacing ``dx``.

    ``tail_mass`` is the kernel mass beyond ``K dx`` that the truncated stencil
    drops when ``eta/dx`` is not an integer.
    """

    gamma: np.ndarray
    dx: float
    eta: float
    tail_mass: float = 0.0

    @property
    def K(self) -> int:
        return len(self.gamma)


def stencil_size(eta: float, dx: float) -> int:
    # guard against eta/dx landing a hair below an integer (1/0.005 etc.)
    return int(math.floor(eta / dx * (1.0 + 1e-12)))


def kernel_weights(kernel: Kernel, dx: float) -> WeightTable:
    """Exact cell integrals ``gamma_k`` of ``kernel`` for ``k < floor(eta/dx)``."""
    if not dx > 0:
        raise ConfigurationError(f"dx must be positive, got {dx}")
    if dx > kernel.eta * (1.0 + 1e-12):
        raise ConfigurationError(f"dx={dx} exceeds eta={kernel.eta}: empty stencil")
    K = stencil_size(kernel.eta, dx)
    k = np.arange(K, dtype=float)
    a = k * dx
    b = np.minimum((k + 1.0) * dx, kernel.eta)
    if kernel.kind == "constant":
        gamma = np.full(K, dx / kernel.eta)
        if b[-1] < (K) * dx:
            gamma[-1] = (b[-1] - a[-1]) / kernel.eta
    else:
        gamma = np.asarray(kernel.segment_integral(a, b), dtype=float)
    tail = float(kernel.segment_integral(np.float64(b[-1]), np.float64(kernel.eta)))
    return WeightTable(gamma=gamma, dx=float(dx), eta=kernel.eta, tail_mass=max(tail, 0.0))


@dataclass
class KernelReport:
    nonnegative: bool
    non_increasing: bool
    normalized: bool
    integral: float

    @property
    def passed(self) -> bool:
        return self.nonnegative and self.non_increasing and self.normalized


def validate_kernel(kernel: Kernel, samples: int = 1001) -> KernelReport:
    """Check positivity, monotonicity and unit mass of ``kernel`` on ``[0, eta]``.

    Mass is integrated independently of ``kernel.cdf`` with adaptive
    quadrature; the closed interval is sampled, so the jump of the constant
    kernel at the support edge is ignored.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    x = np.linspace(0.0, kernel.eta, samples)
    w = np.asarray(kernel.density(x), dtype=float)
    integral = integrate.quad(kernel.density, 0.0, kernel.eta, epsabs=1e-13, epsrel=1e-13,
                              limit=200)[0]
    scale = max(1.0, float(np.max(np.abs(w))))
    return KernelReport(
        nonnegative=bool(np.all(w >= 0)),
        non_increasing=bool(np.all(np.diff(w) <= 1e-14 * scale)),
        normalized=abs(integral - 1.0) <= 1e-10,
        integral=integral,
    )
