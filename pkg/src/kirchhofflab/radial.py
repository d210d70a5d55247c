"""Radial grids, quadrature with analytic exponential tails, and radial stencils.

Everything downstream works with radial profiles sampled on a 1D grid in
r >= 0, decaying like C*exp(-delta*r)/r far out.  Integrals over R^3 of
radial integrands reduce to weighted 1D quadrature plus a closed-form tail
correction beyond the truncation radius.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import simpson
from scipy.special import exp1


class NonDecayingIntegrand(Exception):
    """Integrand has not decayed at the truncation radius and carries no tail."""


class TailNotExponential(Exception):
    """log(r*f) is not well fitted by a straight line over the requested window."""


@dataclass(frozen=True)
class RadialGrid:
    """Strictly increasing radii starting at 0."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ValueError("grid needs at least 3 nodes")
        if nodes[0] != 0.0:
            raise ValueError("first node must be r = 0")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")

    @property
    def r_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def uniform_step(self) -> Optional[float]:
        """Step h if the grid is uniform (up to roundoff), else None."""
        d = np.diff(self.nodes)
        h = d[0]
        if np.allclose(d, h, rtol=1e-8, atol=0.0):
            return float(h)
        return None


def default_grid(h: float = 0.01, r_max: float = 40.0) -> RadialGrid:
    """Uniform grid on [0, r_max].  r_max = 40 keeps exp(-r) tails below 1e-17."""
    n = int(round(r_max / h))
    return RadialGrid(np.linspace(0.0, n * h, n + 1))


@dataclass(frozen=True)
class RadialFunction:
    """Values on a RadialGrid, with an optional fitted tail C*exp(-delta*r)/r.

    When a tail is attached it must be consistent with the outermost grid
    values (1% relative), so quadrature can switch to the closed form at
    r_max without a jump.
    """

    grid: RadialGrid
    values: np.ndarray
    tail: Optional[Tuple[float, float]] = None  # (C, delta)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != self.grid.nodes.shape:
            raise ValueError("values must match grid nodes")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        if self.tail is not None:
            c, delta = self.tail
            if delta <= 0:
                raise ValueError("tail decay rate must be positive")
            r = self.grid.nodes[-2:]
            model = c * np.exp(-delta * r) / r
            ref = np.abs(values[-2:])
            scale = np.max(ref)
            if scale > 0 and np.max(np.abs(model - values[-2:])) > 0.01 * scale:
                raise ValueError("tail does not match outermost grid values")

    def with_values(self, values, tail=None) -> "RadialFunction":
        return RadialFunction(self.grid, np.asarray(values, dtype=float), tail)

    def tail_value(self, r):
        c, delta = self.tail
        return c * np.exp(-delta * np.asarray(r)) / np.asarray(r)

    def sample(self, r) -> np.ndarray:
        """Evaluate at arbitrary radii: linear interpolation inside the grid,
        tail formula beyond (zero if no tail)."""
        r = np.asarray(r, dtype=float)
        out = np.interp(r, self.grid.nodes, self.values, right=0.0)
        if self.tail is not None:
            beyond = r > self.grid.r_max
            if np.any(beyond):
                out = np.where(beyond, self.tail_value(np.maximum(r, 1e-300)), out)
        return out


def _tail_integral(c: float, delta: float, r0: float, weight: int) -> float:
    """Closed form of int_{r0}^inf r^w * (C e^{-delta r} / r) dr, with the
    4*pi*r^2 volume factor folded in for w = 2."""
    if weight == 2:
        return 4.0 * np.pi * c * np.exp(-delta * r0) * (r0 / delta + 1.0 / delta**2)
    if weight == 1:
        return c * np.exp(-delta * r0) / delta
    if weight == 0:
        return c * float(exp1(delta * r0))
    raise ValueError("weight must be 0, 1 or 2")


def integrate_radial(f: RadialFunction, weight: int) -> float:
    """Composite-Simpson integral of r^weight * f over [0, inf).

    weight = 2 gives the full R^3 integral 4*pi*int r^2 f dr; weights 0 and 1
    are the bare 1D moments used as inner integrals elsewhere.  The analytic
    tail contribution is added when f carries one.
    """
    if weight not in (0, 1, 2):
        raise ValueError("weight must be 0, 1 or 2")
    last = abs(float(f.values[-1]))
    if f.tail is None and last > 1e-6:
        raise NonDecayingIntegrand(
            f"last grid value {last:.3e} exceeds 1e-6 and no tail is attached"
        )
    r = f.grid.nodes
    integrand = f.values * r**weight
    if weight == 2:
        integrand = 4.0 * np.pi * integrand
    total = float(simpson(integrand, x=r))
    if f.tail is not None:
        c, delta = f.tail
        total += _tail_integral(c, delta, f.grid.r_max, weight)
    return total


def radial_laplacian(f: RadialFunction) -> RadialFunction:
    """Second-order stencil for f'' + (2/r) f'.

    The removable singularity at r = 0 is handled by the even-extension
    limit 3 f''(0); the outermost node uses a one-sided formula.
    """
    r = f.grid.nodes
    v = f.values
    n = v.size
    out = np.empty_like(v)

    h_plus = r[2:] - r[1:-1]
    h_minus = r[1:-1] - r[:-2]
    fp = v[2:]
    f0 = v[1:-1]
    fm = v[:-2]
    second = 2.0 * (h_minus * fp - (h_plus + h_minus) * f0 + h_plus * fm) / (
        h_plus * h_minus * (h_plus + h_minus)
    )
    first = (
        h_minus**2 * fp + (h_plus**2 - h_minus**2) * f0 - h_plus**2 * fm
    ) / (h_plus * h_minus * (h_plus + h_minus))
    out[1:-1] = second + 2.0 * first / r[1:-1]

    # r = 0: even extension gives f'(0) = 0 and Delta f = 3 f''(0).
    h1 = r[1]
    out[0] = 6.0 * (v[1] - v[0]) / h1**2

    # one-sided second-order closure at r_max (rarely used: profiles are ~0 there)
    if n >= 4 and f.grid.uniform_step is not None:
        h = f.grid.uniform_step
        second_end = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
        first_end = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
        out[-1] = second_end + 2.0 * first_end / r[-1]
    else:
        out[-1] = out[-2]
    return RadialFunction(f.grid, out)


def fit_tail(f: RadialFunction, window: Tuple[int, int]) -> Tuple[float, float]:
    """Fit C, delta of C*exp(-delta*r)/r by least squares on log(r*f).

    window is a half-open index range (lo, hi) into the grid.  Raises
    TailNotExponential when the max deviation of the log-linear fit exceeds
    1e-2 or the fitted rate is not positive.
    """
    lo, hi = window
    r = f.grid.nodes[lo:hi]
    v = f.values[lo:hi]
    if r.size < 4:
        raise ValueError("window too short for a tail fit")
    if np.any(v <= 0):
        raise ValueError("tail fit requires strictly positive values on the window")
    y = np.log(r * v)
    slope, intercept = np.polyfit(r, y, 1)
    resid = y - (slope * r + intercept)
    if np.max(np.abs(resid)) > 1e-2 or slope >= 0:
        raise TailNotExponential(
            f"log-linear fit residual {np.max(np.abs(resid)):.3e}, slope {slope:.3e}"
        )
    return float(np.exp(intercept)), float(-slope)
