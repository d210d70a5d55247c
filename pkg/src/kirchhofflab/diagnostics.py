"""Expansion, concentration and identity diagnostics for perturbed solves.

The energy of the translated profile against separable potentials reduces
to 1D radial quadratures: averaging a function of a single coordinate over
the sphere of radius rho is a flat average over t = omega_i in [-1, 1], so
each moment against U^2 has a closed-form angular factor.  The local
flux-balance identity is evaluated on spheres with an octahedral angular
rule and trilinear interpolation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import RegularGridInterpolator

from .ground_state import KirchhoffGroundState
from .potential import PotentialModel, eval_V, eval_gradV
from .perturbed import (
    Box3D,
    EpsilonFrame,
    Field3D,
    ReducedSolution,
    grad_inner,
    minimize_center,
    reduce_fixed_point,
    star_norm,
)


class SphereOutsideDomain(Exception):
    pass


def _radial_moment(gs: KirchhoffGroundState, weight: np.ndarray) -> float:
    """2*pi*int rho^2 U(rho)^2 * weight(rho) drho on the profile grid."""
    r = gs.U.grid.nodes
    u2 = gs.U.values**2
    return 2.0 * math.pi * float(simpson(r * r * u2 * weight, x=r))


def _avg_abs_power(a: np.ndarray, y: float, m: float) -> np.ndarray:
    """(1/2) int_{-1}^{1} |a t + y|^m dt, elementwise in a >= 0."""
    out = np.empty_like(a)
    small = a < 1e-300
    out[small] = abs(y) ** m
    aa = a[~small]
    up = np.abs(y + aa) ** (m + 1.0) * np.sign(y + aa)
    dn = np.abs(y - aa) ** (m + 1.0) * np.sign(y - aa)
    out[~small] = (up - dn) / (2.0 * aa * (m + 1.0))
    return out


def _avg_signed_power(a: np.ndarray, y: float, m: float) -> np.ndarray:
    """(1/2) int_{-1}^{1} |a t + y|^{m-2} (a t + y) dt, elementwise."""
    out = np.empty_like(a)
    small = a < 1e-300
    out[small] = np.abs(y) ** (m - 2.0) * y if y != 0.0 else 0.0
    aa = a[~small]
    out[~small] = (np.abs(y + aa) ** m - np.abs(y - aa) ** m) / (2.0 * aa * m)
    return out


def _excess_average(gs: KirchhoffGroundState, potential: PotentialModel,
                    eps: float, y: np.ndarray) -> np.ndarray:
    """Spherical average of V(eps z + y) - V(x0) at each blown-up radius.

    Separable power wells reduce to closed-form averages over t = omega_i;
    radial Holder wells go through Gauss-Legendre in t.
    """
    r = gs.U.grid.nodes
    a = eps * r
    if potential.kind == "constant":
        return np.zeros_like(r)
    if potential.kind == "power_well":
        avg = np.zeros_like(r)
        dy = y - potential.x0
        for i in range(3):
            avg = avg + potential.coeffs[i] * _avg_abs_power(a, dy[i], potential.m)
            if potential.tilt[i] != 0.0:
                # (1/2) int_{-1}^{1} (a t + y)^3 dt = y^3 + a^2 y
                avg = avg + potential.tilt[i] * (dy[i] ** 3 + a * a * dy[i])
        return avg
    if potential.kind == "holder_well":
        t, w = np.polynomial.legendre.leggauss(64)
        ynorm = float(np.linalg.norm(y - potential.x0))
        rad = np.sqrt(
            a[:, None] ** 2 + 2.0 * a[:, None] * ynorm * t[None, :] + ynorm**2
        )
        return 0.5 * (potential.kappa * rad**potential.alpha) @ w
    raise ValueError(f"no moment rule for potential kind {potential.kind!r}")


def potential_moment(gs: KirchhoffGroundState, potential: PotentialModel,
                     eps: float, y) -> float:
    """int V(eps z + y) U(z)^2 dz by angular reduction (radial quadrature)."""
    y = np.asarray(y, dtype=float).reshape(3)
    if potential.kind == "constant":
        return gs.M_U
    return gs.M_U + _radial_moment(gs, 2.0 * _excess_average(gs, potential, eps, y))


def profile_energy(gs: KirchhoffGroundState, potential: PotentialModel,
                   eps: float, y) -> float:
    """I_eps(U_{eps,y}) semi-analytically: eps^3 times radial quadratures."""
    pm = potential_moment(gs, potential, eps, y)
    p = gs.params.p
    i_star = (
        0.5 * (gs.params.a * gs.K_U + pm)
        + 0.25 * gs.params.b * gs.K_U**2
        - gs.P_U / (p + 1.0)
    )
    return eps**3 * i_star


def expansion_remainder(gs: KirchhoffGroundState, potential: PotentialModel,
                        eps: float, y) -> float:
    """I_eps(U_{eps,y}) - A eps^3 - B eps^3 (V(y) - V(x0))."""
    vy = eval_V(potential, np.asarray(y, dtype=float))
    v0 = eval_V(potential, potential.x0)
    return profile_energy(gs, potential, eps, y) - gs.A * eps**3 - gs.B * eps**3 * (vy - v0)


def fit_power(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log|y| against log x."""
    xs = np.asarray(xs, dtype=float)
    ys = np.abs(np.asarray(ys, dtype=float))
    if np.any(ys == 0.0):
        raise ValueError("cannot fit a power law through zero values")
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def surrogate_center(gs: KirchhoffGroundState, potential: PotentialModel,
                     eps: float, delta: float = 0.5) -> np.ndarray:
    """Minimizer of the semi-analytic profile energy over the center.

    Matches the reduced-energy minimizer to leading order at millisecond
    cost, and makes a good frame center for asymmetric wells (Newton from a
    badly centered ansatz wastes its time on the translation mode).
    """
    from scipy.optimize import minimize

    x0 = np.asarray(potential.x0, dtype=float)
    res = minimize(
        lambda y: profile_energy(gs, potential, eps, y),
        x0,
        method="Nelder-Mead",
        options={"xatol": 1e-6, "fatol": 1e-18, "maxfev": 400,
                 "initial_simplex": x0 + np.vstack([np.zeros(3), 0.1 * delta * np.eye(3)])},
    )
    y = np.asarray(res.x)
    if np.linalg.norm(y - x0) > delta:
        return x0
    return y


def moment_functional(gs: KirchhoffGroundState, eps: float, y, m: float,
                      i: int) -> float:
    """int |eps z_i + y_i|^{m-2} (eps z_i + y_i) U(z)^2 dz."""
    if m <= 1.0:
        raise ValueError("moment exponent must exceed 1")
    y = np.asarray(y, dtype=float).reshape(3)
    avg = _avg_signed_power(eps * gs.U.grid.nodes, y[i], m)
    return _radial_moment(gs, 2.0 * avg)


# 26-point octahedral angular rule, exact through degree 7; the symmetric
# point set makes odd integrands cancel exactly.
def _octahedral_26():
    pts = []
    wts = []
    for i in range(3):
        for s in (1.0, -1.0):
            e = np.zeros(3)
            e[i] = s
            pts.append(e)
            wts.append(1.0 / 21.0)
    inv2 = 1.0 / math.sqrt(2.0)
    for i in range(3):
        for j in range(i + 1, 3):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    e = np.zeros(3)
                    e[i] = si * inv2
                    e[j] = sj * inv2
                    pts.append(e)
                    wts.append(4.0 / 105.0)
    inv3 = 1.0 / math.sqrt(3.0)
    for sx in (1.0, -1.0):
        for sy in (1.0, -1.0):
            for sz in (1.0, -1.0):
                pts.append(np.array([sx, sy, sz]) * inv3)
                wts.append(27.0 / 840.0)
    return np.array(pts), np.array(wts)


_OCTA_PTS, _OCTA_WTS = _octahedral_26()


@dataclass
class PohozaevReport:
    component: int
    d_physical: float
    rho: float
    lhs: float
    rhs_flux: float
    rhs_potential: float
    rhs_nonlinear: float
    discrepancy: float
    scale: float

    @property
    def rhs_total(self) -> float:
        return self.rhs_flux + self.rhs_potential + self.rhs_nonlinear

    def to_dict(self) -> dict:
        return {
            "component": self.component,
            "d_physical": self.d_physical,
            "rho_blownup": self.rho,
            "lhs": self.lhs,
            "rhs_flux": self.rhs_flux,
            "rhs_potential": self.rhs_potential,
            "rhs_nonlinear": self.rhs_nonlinear,
            "rhs_total": self.rhs_total,
            "discrepancy": self.discrepancy,
            "scale": self.scale,
        }


def _gradient_fields(field: Field3D):
    """4th-order central differences of the field, one array per axis."""
    h = field.box.h
    grads = []
    v = field.values
    for ax in range(3):
        g = np.zeros_like(v)
        sl = [slice(2, -2)] * 1
        idx0 = [slice(None)] * 3
        idx0[ax] = slice(2, -2)
        for shift, coef in ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)):
            idx = [slice(None)] * 3
            idx[ax] = slice(2 + shift, v.shape[ax] - 2 + shift or None)
            g[tuple(idx0)] += coef * v[tuple(idx)]
        g /= 12.0 * h
        grads.append(g)
    return grads


def _sphere_samples(sol: ReducedSolution, rho: float):
    frame = sol.frame
    box = frame.box
    z_center = (sol.center - frame.y) / frame.eps
    pts = z_center[None, :] + rho * _OCTA_PTS
    if np.max(np.abs(pts)) >= box.L:
        raise SphereOutsideDomain(
            f"sphere of blown-up radius {rho:.2f} leaves the box"
        )
    ax = (box.axis,) * 3
    u_itp = RegularGridInterpolator(ax, sol.field.values)
    u = u_itp(pts)
    grads = _gradient_fields(sol.field)
    gu = np.stack([RegularGridInterpolator(ax, g)(pts) for g in grads], axis=1)
    vbar = eval_V(frame.potential, frame.eps * pts + frame.y)
    return pts, u, gu, vbar


def boundary_energy(sol: ReducedSolution, rho: float) -> float:
    """Surface integral of |grad u|^2 + u^2 on the blown-up sphere."""
    _, u, gu, _ = _sphere_samples(sol, rho)
    dens = np.sum(gu * gu, axis=1) + u * u
    return 4.0 * math.pi * rho**2 * float(np.dot(_OCTA_WTS, dens))


def choose_ball_radius(sol: ReducedSolution, n_candidates: int = 5) -> float:
    """Physical radius d whose blown-up sphere carries the least boundary
    energy among the candidates (low-noise shell for the flux balance)."""
    box = sol.frame.box
    rhos = np.linspace(0.35, 0.75, n_candidates) * box.L
    energies = [boundary_energy(sol, rho) for rho in rhos]
    rho = rhos[int(np.argmin(energies))]
    return float(rho * sol.frame.eps)


def pohozaev_check(sol: ReducedSolution, d: float, i: int) -> PohozaevReport:
    """Flux balance on the ball B_d(center): the interior potential term
    against the three boundary terms, all by quadrature."""
    if i not in (0, 1, 2):
        raise ValueError("component index must be 0, 1 or 2")
    frame = sol.frame
    eps = frame.eps
    box = frame.box
    rho = d / eps
    if rho >= box.L:
        raise SphereOutsideDomain(f"d/eps = {rho:.2f} exceeds the box half-width")

    pts, u, gu, vbar = _sphere_samples(sol, rho)
    normals = _OCTA_PTS
    area = 4.0 * math.pi * rho**2

    G = grad_inner(box, sol.field.values, sol.field.values)
    coeff = eps**2 * (frame.gs.params.a + frame.gs.params.b * G)

    grad_sq = np.sum(gu * gu, axis=1)
    du_dn = np.sum(gu * normals, axis=1)
    flux_dens = grad_sq * normals[:, i] - 2.0 * du_dn * gu[:, i]
    rhs_flux = coeff * area * float(np.dot(_OCTA_WTS, flux_dens))

    rhs_pot = eps**2 * area * float(np.dot(_OCTA_WTS, vbar * u * u * normals[:, i]))
    p = frame.gs.params.p
    rhs_nl = (
        -2.0 / (p + 1.0)
        * eps**2 * area
        * float(np.dot(_OCTA_WTS, np.maximum(u, 0.0) ** (p + 1.0) * normals[:, i]))
    )

    # interior term: masked rectangle sum; the integrand is exponentially
    # small at the sphere so the staircase error is negligible
    axv = box.axis
    X, Y, Z = np.meshgrid(axv, axv, axv, indexing="ij")
    z_center = (sol.center - frame.y) / eps
    mask = (X - z_center[0]) ** 2 + (Y - z_center[1]) ** 2 + (Z - z_center[2]) ** 2 < rho**2
    phys = np.stack(
        [eps * X + frame.y[0], eps * Y + frame.y[1], eps * Z + frame.y[2]], axis=-1
    ).reshape(-1, 3)
    gradv = eval_gradV(frame.potential, phys)[:, i].reshape(X.shape)
    lhs = eps**3 * float(np.sum(gradv * sol.field.values**2 * mask)) * box.h**3

    scale = coeff * area * float(np.dot(_OCTA_WTS, grad_sq + u * u))
    denom = max(abs(lhs), scale, 1e-300)
    rhs_total = rhs_flux + rhs_pot + rhs_nl
    return PohozaevReport(
        component=i,
        d_physical=d,
        rho=rho,
        lhs=lhs,
        rhs_flux=rhs_flux,
        rhs_potential=rhs_pot,
        rhs_nonlinear=rhs_nl,
        discrepancy=abs(lhs - rhs_total) / denom,
        scale=scale,
    )


@dataclass
class TraceEntry:
    eps: float
    y: Optional[np.ndarray]
    drift_over_eps: Optional[float]
    phi_norm: Optional[float]
    phi_ratio: Optional[float]  # phi_norm / eps^{3/2}
    error: Optional[str] = None


@dataclass
class ConcentrationTrace:
    entries: List[TraceEntry] = field(default_factory=list)
    fitted_exponent: Optional[float] = None

    def successful(self) -> List[TraceEntry]:
        return [e for e in self.entries if e.error is None]

    def fit_exponent(self) -> Optional[float]:
        ok = self.successful()
        if len(ok) >= 2:
            self.fitted_exponent = fit_power(
                [e.eps for e in ok], [e.phi_norm for e in ok]
            )
        return self.fitted_exponent

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["eps", "y1", "y2", "y3", "drift_over_eps", "phi_norm",
                 "phi_ratio", "fitted_exponent", "error"]
            )
            for e in self.entries:
                y = ["", "", ""] if e.y is None else [f"{v:.17g}" for v in e.y]
                writer.writerow(
                    [e.eps, *y,
                     "" if e.drift_over_eps is None else f"{e.drift_over_eps:.17g}",
                     "" if e.phi_norm is None else f"{e.phi_norm:.17g}",
                     "" if e.phi_ratio is None else f"{e.phi_ratio:.17g}",
                     "" if self.fitted_exponent is None else f"{self.fitted_exponent:.17g}",
                     e.error or ""]
                )


def concentration_sweep(gs: KirchhoffGroundState, potential: PotentialModel,
                        eps_list: Sequence[float], delta: float,
                        box: Optional[Box3D] = None,
                        fp_tol: float = 1e-10, **center_kw) -> ConcentrationTrace:
    """Run the reduction pipeline per eps and collect the concentration data.

    Per-eps failures are recorded and the sweep continues.
    """
    eps_list = list(eps_list)
    if any(e2 >= e1 for e1, e2 in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    box = box or Box3D()
    trace = ConcentrationTrace()
    for eps in eps_list:
        try:
            y_eps, _ = minimize_center(gs, potential, eps, delta, box=box,
                                       fp_tol=fp_tol, **center_kw)
            frame = EpsilonFrame(gs, potential, eps, y_eps, box)
            phi = reduce_fixed_point(frame, tol=fp_tol)
            norm = eps**1.5 * star_norm(frame, phi.values)
            drift = float(np.linalg.norm(y_eps - potential.x0)) / eps
            trace.entries.append(
                TraceEntry(eps, y_eps, drift, norm, norm / eps**1.5)
            )
        except Exception as exc:  # noqa: BLE001 - per-eps errors are data
            trace.entries.append(TraceEntry(eps, None, None, None, None, repr(exc)))
    trace.fit_exponent()
    return trace


@dataclass
class ComparisonResult:
    identical: bool
    sup_difference: float
    xi: Optional[Field3D]
    peak_location: Optional[np.ndarray]
    decays_outside: Optional[bool]

    def cosine_with(self, direction: np.ndarray) -> float:
        num = float(np.sum(self.xi.values * direction))
        den = float(np.linalg.norm(self.xi.values.ravel()) * np.linalg.norm(direction.ravel()))
        return abs(num) / den


def compare_solutions(u1: ReducedSolution, u2: ReducedSolution,
                      tol: float = 1e-14) -> ComparisonResult:
    """Normalized difference of two solutions on the same frame.

    Returns the equality verdict when the sup difference sits below tol;
    otherwise reports where |xi| = 1 is attained and whether xi decays
    below 0.1 outside the ball of blown-up radius 10.
    """
    b1, b2 = u1.frame.box, u2.frame.box
    if (b1.L, b1.n) != (b2.L, b2.n) or u1.frame.eps != u2.frame.eps:
        raise ValueError("solutions live on different frames")
    diff = u1.field.values - u2.field.values
    sup = float(np.max(np.abs(diff)))
    if sup < tol:
        return ComparisonResult(True, sup, None, None, None)
    xi = diff / sup
    idx = np.unravel_index(np.argmax(np.abs(xi)), xi.shape)
    loc = np.array([b1.axis[j] for j in idx])
    ax = b1.axis
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij", sparse=True)
    outside = (X * X + Y * Y + Z * Z) > 100.0
    decays = bool(np.max(np.abs(xi)[outside]) < 0.1) if np.any(outside) else True
    return ComparisonResult(False, sup, Field3D(b1, xi), loc, decays)
