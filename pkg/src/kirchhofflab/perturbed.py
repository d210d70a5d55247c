"""Singularly perturbed solves in blown-up coordinates z = (x - y)/eps.

In these coordinates the equation reads

    -(a + b * int |grad u|^2) Lap u + V(eps z + y) u = u_+^p

on a fixed box, uniformly in eps, and every physical integral is eps^3
times its blown-up counterpart.  Two independent solution paths live here:
a damped Newton iteration with matrix-free MINRES inner solves, and the
projection / contraction / reduced-energy route that mirrors the
finite-dimensional reduction argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
from scipy.fft import dstn, idstn
from scipy.sparse.linalg import LinearOperator, minres

from .ground_state import KirchhoffGroundState
from .potential import PotentialModel, eval_V


class NoConvergence(Exception):
    pass


class LostPositivity(Exception):
    pass


class ContractionFailure(Exception):
    pass


class DivisionByZeroNorm(Exception):
    pass


class BoundaryMinimizer(Exception):
    pass


class DegenerateLandscape(Exception):
    """All centers tie: the reduced energy carries no information about y
    (translation-invariant configuration, e.g. a constant potential)."""


@dataclass(frozen=True)
class Box3D:
    """Cube [-L, L]^3 with an odd number of nodes per axis (origin on grid)
    and homogeneous Dirichlet boundary."""

    L: float = 14.0
    n: int = 97

    def __post_init__(self):
        if self.L < 12.0:
            raise ValueError("box half-width must be at least 12")
        if self.n % 2 == 0 or self.n < 5:
            raise ValueError("n must be odd and at least 5")

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.n - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.n)


@dataclass
class Field3D:
    box: Box3D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.box.n,) * 3:
            raise ValueError("field shape must match the box")
        self.values = v

    @classmethod
    def zeros(cls, box: Box3D) -> "Field3D":
        return cls(box, np.zeros((box.n,) * 3))

    def copy(self) -> "Field3D":
        return Field3D(self.box, self.values.copy())


def _zero_boundary(v: np.ndarray) -> np.ndarray:
    v[0, :, :] = v[-1, :, :] = 0.0
    v[:, 0, :] = v[:, -1, :] = 0.0
    v[:, :, 0] = v[:, :, -1] = 0.0
    return v


def _second_diff(v: np.ndarray, ax: int) -> np.ndarray:
    """Per-axis second difference 2v - v(+) - v(-) with Dirichlet rows zeroed."""
    out = np.zeros_like(v)
    sl0 = [slice(None)] * 3
    slp = [slice(None)] * 3
    slm = [slice(None)] * 3
    sl0[ax] = slice(1, -1)
    slp[ax] = slice(2, None)
    slm[ax] = slice(None, -2)
    out[tuple(sl0)] = 2.0 * v[tuple(sl0)] - v[tuple(slp)] - v[tuple(slm)]
    return _zero_boundary(out)


def lap_box(box: Box3D, v: np.ndarray) -> np.ndarray:
    """Discrete Laplacian, 4th order: per axis -(T + T^2/12)/h^2 with T the
    second-difference matrix.  Being a polynomial in T keeps the operator
    symmetric positive and exactly diagonalized by the sine transform."""
    h2 = box.h**2
    out = np.zeros_like(v)
    for ax in range(3):
        t = _second_diff(v, ax)
        out -= t + _second_diff(t, ax) / 12.0
    return out / h2


def grad_inner(box: Box3D, u: np.ndarray, v: np.ndarray) -> float:
    """int grad u . grad v: the exact summation-by-parts partner of lap_box,
    written so the expression is bitwise symmetric in (u, v)."""
    h = box.h
    total = 0.0
    for ax in range(3):
        du = np.diff(u, axis=ax)
        dv = np.diff(v, axis=ax)
        tu = _second_diff(u, ax)
        tv = _second_diff(v, ax)
        total += float(np.sum(du * dv)) + float(np.sum(tu * tv)) / 12.0
    return total * h  # (du/h)(dv/h) * h^3

def volume_integral(box: Box3D, f: np.ndarray) -> float:
    return float(np.sum(f)) * box.h**3


class EpsilonFrame:
    """One (eps, y) configuration: cached profile samples, potential values
    on the box, translation modes and their projection data.

    Treated as immutable after construction.
    """

    def __init__(self, gs: KirchhoffGroundState, potential: PotentialModel,
                 eps: float, y, box: Optional[Box3D] = None):
        if not 0.0 < eps <= 0.5:
            raise ValueError("eps must lie in (0, 0.5]")
        y = np.asarray(y, dtype=float).reshape(3)
        if np.linalg.norm(y - potential.x0) > potential.local_radius():
            raise ValueError("center must stay inside the potential's local radius")
        self.gs = gs
        self.potential = potential
        self.eps = float(eps)
        self.y = y
        self.box = box or Box3D()

    @cached_property
    def _mesh_radii(self) -> np.ndarray:
        ax = self.box.axis
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij", sparse=True)
        return np.sqrt(X * X + Y * Y + Z * Z)

    @cached_property
    def V_bar(self) -> np.ndarray:
        """V(eps z + y) on the box."""
        ax = self.box.axis
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        pts = np.stack(
            [self.eps * X + self.y[0], self.eps * Y + self.y[1], self.eps * Z + self.y[2]],
            axis=-1,
        ).reshape(-1, 3)
        return eval_V(self.potential, pts).reshape((self.box.n,) * 3)

    def sample_radial(self, radial, shift=None) -> np.ndarray:
        """Sample a radial profile at |z - shift| over the box."""
        ax = self.box.axis
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij", sparse=True)
        if shift is None:
            rho = self._mesh_radii
        else:
            rho = np.sqrt((X - shift[0]) ** 2 + (Y - shift[1]) ** 2 + (Z - shift[2]) ** 2)
        vals = np.interp(rho.ravel(), radial.grid.nodes, radial.values, right=0.0)
        return vals.reshape((self.box.n,) * 3)

    @cached_property
    def U(self) -> np.ndarray:
        u = self.sample_radial(self.gs.U)
        return _zero_boundary(u)

    @cached_property
    def translation_modes(self) -> list:
        """d/dz_i of the profile: dU(|z|) z_i / |z|."""
        ax = self.box.axis
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij", sparse=True)
        rho = self._mesh_radii
        slope = np.interp(rho.ravel(), self.gs.dU.grid.nodes, self.gs.dU.values,
                          right=0.0).reshape(rho.shape)
        with np.errstate(invalid="ignore"):
            base = np.where(rho > 0.0, slope / np.maximum(rho, 1e-300), 0.0)
        modes = []
        for comp in (X, Y, Z):
            t = base * comp
            modes.append(_zero_boundary(t))
        return modes

    def star_apply(self, v: np.ndarray) -> np.ndarray:
        """(a * (-Lap) + V_bar) v: the Gram operator of the weighted inner
        product in blown-up coordinates."""
        return -self.gs.params.a * lap_box(self.box, v) + self.V_bar * v

    @cached_property
    def mode_duals(self) -> list:
        return [_zero_boundary(self.star_apply(t)) for t in self.translation_modes]

    @cached_property
    def mode_gram(self) -> np.ndarray:
        g = np.empty((3, 3))
        for i, t in enumerate(self.translation_modes):
            for j, w in enumerate(self.mode_duals):
                g[i, j] = np.sum(t * w) * self.box.h**3
        return 0.5 * (g + g.T)

    @cached_property
    def _dst_eigs(self) -> np.ndarray:
        m = self.box.n - 2
        k = np.arange(1, m + 1)
        t = 2.0 * (1.0 - np.cos(np.pi * k / (m + 1)))
        lam = (t + t * t / 12.0) / self.box.h**2
        return lam[:, None, None] + lam[None, :, None] + lam[None, None, :]

    def constant_coefficient_solve(self, rhs: np.ndarray, kappa: float,
                                   mu: float) -> np.ndarray:
        """Solve (kappa * (-Lap) + mu) x = rhs by fast diagonalization."""
        inner = rhs[1:-1, 1:-1, 1:-1]
        spec = dstn(inner, type=1)
        spec /= kappa * self._dst_eigs + mu
        out = np.zeros_like(rhs)
        out[1:-1, 1:-1, 1:-1] = idstn(spec, type=1)
        return out


def star_inner(frame: EpsilonFrame, u: np.ndarray, v: np.ndarray) -> float:
    """a int grad u . grad v + int V_bar u v (eps-free bracket)."""
    return (
        frame.gs.params.a * grad_inner(frame.box, u, v)
        + volume_integral(frame.box, frame.V_bar * u * v)
    )


def h_eps_inner(frame: EpsilonFrame, u: Field3D, v: Field3D) -> float:
    """Weighted inner product int (eps^2 a grad u . grad v + V u v) dx,
    evaluated in blown-up coordinates where it is eps^3 times the bracket."""
    return frame.eps**3 * star_inner(frame, u.values, v.values)


def h_eps_norm(frame: EpsilonFrame, u: Field3D) -> float:
    return math.sqrt(max(h_eps_inner(frame, u, u), 0.0))


def star_norm(frame: EpsilonFrame, v: np.ndarray) -> float:
    return math.sqrt(max(star_inner(frame, v, v), 0.0))


def eps_sobolev_ratio(frame: EpsilonFrame, phi: Field3D, q: float) -> float:
    """||phi||_Lq / (eps^(3/q - 3/2) ||phi||_eps); eps enters only through
    the potential samples, which is the content of the uniform inequality."""
    if not 2.0 <= q <= 6.0:
        raise ValueError("q must lie in [2, 6]")
    nrm = star_norm(frame, phi.values)
    if nrm == 0.0:
        raise DivisionByZeroNorm("zero field has no Sobolev ratio")
    lq = volume_integral(frame.box, np.abs(phi.values) ** q) ** (1.0 / q)
    return lq / nrm


def _pos_pow(u: np.ndarray, p: float) -> np.ndarray:
    return np.maximum(u, 0.0) ** p


def _deriv_pow(u: np.ndarray, p: float) -> np.ndarray:
    up = np.maximum(u, 0.0)
    if p < 2.0:
        up = np.maximum(up, 1e-12)  # one-sided derivative floored near zero
    return p * up ** (p - 1.0)


def residual(frame: EpsilonFrame, u: Field3D) -> Field3D:
    """F(u) = -(a + b G(u)) Lap u + V_bar u - u_+^p, zero on the boundary."""
    gs = frame.gs
    v = u.values
    G = grad_inner(frame.box, v, v)
    out = (
        -(gs.params.a + gs.params.b * G) * lap_box(frame.box, v)
        + frame.V_bar * v
        - _pos_pow(v, gs.params.p)
    )
    return Field3D(frame.box, _zero_boundary(out))


def jacobian_apply(frame: EpsilonFrame, u: Field3D, v: Field3D) -> Field3D:
    """Directional derivative of F at u: the nonlocal coupling contributes a
    symmetric rank-one term, applied matrix-free."""
    gs = frame.gs
    uv, vv = u.values, v.values
    G = grad_inner(frame.box, uv, uv)
    s = grad_inner(frame.box, uv, vv)
    out = (
        -(gs.params.a + gs.params.b * G) * lap_box(frame.box, vv)
        - 2.0 * gs.params.b * s * lap_box(frame.box, uv)
        + frame.V_bar * vv
        - _deriv_pow(uv, gs.params.p) * vv
    )
    return Field3D(frame.box, _zero_boundary(out))


def energy_functional(frame: EpsilonFrame, u: Field3D) -> float:
    """I_eps(u) = 1/2 ||u||_eps^2 + (eps b / 4)(int |grad u|^2)^2
    - 1/(p+1) int u_+^{p+1}, via the blown-up quadratures."""
    gs = frame.gs
    v = u.values
    G = grad_inner(frame.box, v, v)
    i_star = (
        0.5 * star_inner(frame, v, v)
        + 0.25 * gs.params.b * G * G
        - volume_integral(frame.box, _pos_pow(v, gs.params.p + 1.0)) / (gs.params.p + 1.0)
    )
    return frame.eps**3 * i_star


def l_eps_strong(frame: EpsilonFrame) -> np.ndarray:
    """Strong form of the first-order term: (V_bar - V(x0)) U."""
    v0 = eval_V(frame.potential, frame.potential.x0)
    return _zero_boundary((frame.V_bar - v0) * frame.U)


def l_eps(frame: EpsilonFrame, rtol: float = 1e-12) -> Field3D:
    """Riesz representative of phi -> int (V - V(x0)) U_{eps,y} phi in the
    weighted inner product (solved with preconditioned MINRES)."""
    f = l_eps_strong(frame)
    if np.all(f == 0.0):
        return Field3D.zeros(frame.box)
    op = LinearOperator(
        (f.size, f.size),
        matvec=lambda x: _zero_boundary(
            frame.star_apply(x.reshape(f.shape))
        ).ravel(),
        dtype=float,
    )
    pre = _constant_preconditioner(frame, frame.gs.params.a, 1.0)
    sol, info = minres(op, f.ravel(), rtol=rtol, maxiter=2000, M=pre)
    if info != 0:
        raise NoConvergence(f"Riesz solve stalled (info={info})")
    return Field3D(frame.box, _zero_boundary(sol.reshape(f.shape)))


def _constant_preconditioner(frame: EpsilonFrame, kappa: float, mu: float):
    shape = (frame.box.n,) * 3

    def solve(x):
        return frame.constant_coefficient_solve(x.reshape(shape), kappa, mu).ravel()

    return LinearOperator((frame.box.n**3,) * 2, matvec=solve, dtype=float)


def project_E(frame: EpsilonFrame, phi: Field3D) -> Field3D:
    """Weighted-orthogonal projection onto the complement of the
    translation modes."""
    h3 = frame.box.h**3
    b = np.array([np.sum(w * phi.values) * h3 for w in frame.mode_duals])
    coef = np.linalg.solve(frame.mode_gram, b)
    out = phi.values.copy()
    for ci, t in zip(coef, frame.translation_modes):
        out -= ci * t
    return Field3D(frame.box, out)


def remainder_eval(frame: EpsilonFrame, phi: Field3D, order: int,
                   directions: Optional[Tuple[Field3D, ...]] = None):
    """Higher-order remainder of the energy expansion around the profile.

    order 0: scalar R(phi); order 1: strong-form field of R'(phi) (pair with
    psi via eps^3 * int field * psi); order 2: scalar R''(phi)[psi, xi] for
    the two supplied directions.
    """
    gs = frame.gs
    b, p = gs.params.b, gs.params.p
    box = frame.box
    pv = phi.values
    U = frame.U
    G_phi = grad_inner(box, pv, pv)
    s_U = grad_inner(box, U, pv)

    if order == 0:
        a1 = 0.25 * b * (G_phi**2 + 4.0 * G_phi * s_U)
        a2 = volume_integral(
            box,
            _pos_pow(U + pv, p + 1.0) - _pos_pow(U, p + 1.0)
            - (p + 1.0) * _pos_pow(U, p) * pv
            - 0.5 * p * (p + 1.0) * _pos_pow(U, p - 1.0) * pv**2,
        ) / (p + 1.0)
        return frame.eps**3 * (a1 - a2)

    if order == 1:
        lap_phi = lap_box(box, pv)
        lap_U = lap_box(box, U)
        a1 = -b * (G_phi * lap_phi + G_phi * lap_U + 2.0 * s_U * lap_phi)
        a2 = _pos_pow(U + pv, p) - _pos_pow(U, p) - p * _pos_pow(U, p - 1.0) * pv
        return Field3D(box, _zero_boundary(a1 - a2))

    if order == 2:
        if directions is None or len(directions) != 2:
            raise ValueError("order 2 needs two direction fields")
        psi, xi = (d.values for d in directions)
        g_pp = grad_inner(box, pv, psi)
        g_px = grad_inner(box, pv, xi)
        g_xp = grad_inner(box, xi, psi)
        g_up = grad_inner(box, U, psi)
        g_ux = grad_inner(box, U, xi)
        a1 = b * (
            2.0 * g_pp * g_px + G_phi * g_xp
            + 2.0 * (g_pp * g_ux + g_up * g_px)
            + 2.0 * s_U * g_xp
        )
        a2 = volume_integral(
            box,
            (p * _pos_pow(U + pv, p - 1.0) - p * _pos_pow(U, p - 1.0)) * psi * xi,
        )
        return frame.eps**3 * (a1 - a2)

    raise ValueError("order must be 0, 1 or 2")


def _linearized_at_profile(frame: EpsilonFrame):
    """Matrix-free bilinear-form operator at the profile (the eps-free scale
    of the second variation), including the rank-one gradient coupling."""
    gs = frame.gs
    box = frame.box
    U = frame.U
    G_U = grad_inner(box, U, U)
    coeff = gs.params.a + gs.params.b * G_U
    lapU = lap_box(box, U)
    dpow = _deriv_pow(U, gs.params.p)

    def apply(v: np.ndarray) -> np.ndarray:
        s = grad_inner(box, U, v)
        out = (
            -coeff * lap_box(box, v)
            - 2.0 * gs.params.b * s * lapU
            + frame.V_bar * v
            - dpow * v
        )
        return _zero_boundary(out)

    return apply, coeff


def _projected_solve(frame: EpsilonFrame, apply_op, rhs: np.ndarray,
                     kappa: float, rtol: float = 1e-11,
                     maxiter: int = 1500, x0: Optional[np.ndarray] = None):
    """MINRES on the translation-mode-deflated system P A P x = P rhs."""
    shape = rhs.shape
    duals = frame.mode_duals
    h3 = frame.box.h**3
    gram = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            gram[i, j] = np.sum(duals[i] * duals[j]) * h3
    gram_inv = np.linalg.inv(gram)

    def proj(v):
        b = np.array([np.sum(w * v) * h3 for w in duals])
        coef = gram_inv @ b
        out = v.copy()
        for ci, w in zip(coef, duals):
            out -= ci * w
        return out

    def mv(x):
        v = proj(x.reshape(shape))
        av = apply_op(v)
        return proj(av).ravel()

    op = LinearOperator((rhs.size, rhs.size), matvec=mv, dtype=float)
    pre = _constant_preconditioner(frame, kappa, 1.0)
    b = proj(rhs).ravel()
    x0v = None if x0 is None else proj(x0.reshape(shape)).ravel()
    sol, info = minres(op, b, x0=x0v, rtol=rtol, maxiter=maxiter, M=pre)
    if info != 0:
        raise NoConvergence(f"projected MINRES stalled (info={info})")
    return proj(sol.reshape(shape))


def reduce_fixed_point(frame: EpsilonFrame, tol: float = 1e-10,
                       max_iter: int = 40,
                       phi0: Optional[Field3D] = None) -> Field3D:
    """Picard iteration phi <- -L^{-1}(l + R'(phi)) on the complement of the
    translation modes; the inverse is a projected preconditioned MINRES whose
    tolerance tightens as the iterates converge."""
    apply_op, coeff = _linearized_at_profile(frame)
    f_l = l_eps_strong(frame)
    phi = np.zeros_like(f_l) if phi0 is None else project_E(frame, phi0).values
    eps32 = frame.eps**1.5
    grow_count = 0
    prev_norm = np.inf
    prev_step = np.inf
    last = None
    for _ in range(max_iter):
        f_r = remainder_eval(frame, Field3D(frame.box, phi), order=1).values
        rhs = -(f_l + f_r)
        rhs_scale = eps32 * star_norm(frame, rhs) + 1e-300
        rtol = float(np.clip(0.05 * prev_step / rhs_scale, 1e-13, 1e-5))
        new = _projected_solve(frame, apply_op, rhs, coeff, x0=phi, rtol=rtol)
        step = eps32 * star_norm(frame, new - phi)
        norm = eps32 * star_norm(frame, new)
        if norm > prev_norm * 1.05 and step > prev_step:
            grow_count += 1
            if grow_count >= 3:
                raise ContractionFailure(
                    f"fixed-point iterates growing: |phi| reached {norm:.3e}"
                )
        else:
            grow_count = 0
        prev_step = step
        prev_norm = norm
        phi = new
        last = step
        if step < tol:
            return Field3D(frame.box, phi)
    raise ContractionFailure(f"no contraction after {max_iter} sweeps (last step {last:.2e})")


def reduced_energy(frame: EpsilonFrame, phi: Optional[Field3D] = None,
                   tol: float = 1e-10) -> float:
    """j(y) = I_eps(U_{eps,y} + phi_{eps,y})."""
    if phi is None:
        phi = reduce_fixed_point(frame, tol=tol)
    total = Field3D(frame.box, frame.U + phi.values)
    return energy_functional(frame, total)


@dataclass
class ReducedSolution:
    """A converged perturbed solution in blown-up coordinates."""

    frame: EpsilonFrame
    field: Field3D
    center: np.ndarray            # physical-space concentration point
    correction_norm: float        # ||u - U_{eps,center}||_eps
    residual_norm: float          # sup-norm of the (possibly projected) residual
    full_residual_norm: float
    energy: float
    method: str
    n_iter: int

    @property
    def correction_ratio(self) -> float:
        return self.correction_norm / self.frame.eps**1.5


def extract_center(frame: EpsilonFrame, field: Field3D) -> np.ndarray:
    """Sub-grid concentration point: per-axis parabola through the discrete
    maximum (the drift is o(eps), far below the grid spacing)."""
    v = field.values
    idx = np.unravel_index(np.argmax(v), v.shape)
    z = np.array([frame.box.axis[i] for i in idx], dtype=float)
    h = frame.box.h
    for ax in range(3):
        i = idx[ax]
        if 0 < i < frame.box.n - 1:
            sel = list(idx)
            sel[ax] = i - 1
            fm = v[tuple(sel)]
            sel[ax] = i + 1
            fp = v[tuple(sel)]
            f0 = v[idx]
            denom = fm - 2.0 * f0 + fp
            if denom < 0.0:
                z[ax] += 0.5 * h * (fm - fp) / denom
    return frame.y + frame.eps * z


def correction_against_profile(frame: EpsilonFrame, field: Field3D,
                               center: np.ndarray) -> float:
    """||u - U_{eps,center}||_eps with the profile resampled at the
    extracted center."""
    shift = (np.asarray(center) - frame.y) / frame.eps
    u_ref = frame.sample_radial(frame.gs.U, shift=shift)
    diff = field.values - _zero_boundary(u_ref)
    return frame.eps**1.5 * star_norm(frame, diff)


def initial_profile_field(frame: EpsilonFrame) -> Field3D:
    return Field3D(frame.box, frame.U.copy())


def newton_solve(frame: EpsilonFrame, initial: Optional[Field3D] = None,
                 tol: float = 1e-9, max_iter: int = 30) -> ReducedSolution:
    """Damped Newton with matrix-free MINRES inner solves.

    The line search never accepts a step that increases the sup-norm
    residual; on inner-solver stagnation the three near-null translation
    modes are deflated and the solve retried.
    """
    gs = frame.gs
    box = frame.box
    u = (initial.values if initial is not None else frame.U).copy()
    _zero_boundary(u)
    if float(np.max(np.abs(u))) == 0.0:
        raise LostPositivity("zero initial field selects the trivial branch")

    shape = u.shape
    f = residual(frame, Field3D(box, u)).values
    fnorm = float(np.max(np.abs(f)))
    n_iter = 0
    forcing = 1e-4
    fnorm_prev = np.inf
    while fnorm > tol:
        if n_iter >= max_iter:
            raise NoConvergence(f"Newton stalled at |F| = {fnorm:.3e}")
        if fnorm > 0.2 * fnorm_prev:
            forcing = max(1e-12, forcing * 1e-2)  # sharpen on slow progress
        fnorm_prev = fnorm
        G = grad_inner(box, u, u)
        coeff = gs.params.a + gs.params.b * G
        lap_u = lap_box(box, u)
        dpow = _deriv_pow(u, gs.params.p)

        def jmv(x):
            v = x.reshape(shape)
            s = grad_inner(box, u, v)
            out = (
                -coeff * lap_box(box, v) - 2.0 * gs.params.b * s * lap_u
                + frame.V_bar * v - dpow * v
            )
            return _zero_boundary(out).ravel()

        op = LinearOperator((u.size, u.size), matvec=jmv, dtype=float)
        pre = _constant_preconditioner(frame, coeff, 1.0)
        rtol = max(1e-12, min(forcing, 1e-2 * fnorm))
        delta, info = minres(op, -f.ravel(), rtol=rtol, maxiter=800, M=pre)
        delta = _zero_boundary(delta.reshape(shape))

        def backtrack(direction, max_halve=14):
            t = 1.0
            for _ in range(max_halve):
                trial = u + t * direction
                f_trial = residual(frame, Field3D(box, trial)).values
                fn_trial = float(np.max(np.abs(f_trial)))
                if fn_trial <= (1.0 - 1e-4 * t) * fnorm:
                    return t, trial, f_trial, fn_trial
                t *= 0.5
            return None

        accepted = None if info != 0 else backtrack(delta)
        if accepted is None or accepted[0] < 0.25:
            # stagnation: the near-null translation block dominates the
            # Krylov solve.  Handle it by a 3x3 Galerkin solve on the
            # assembled translation modes and deflate them from the rest.
            apply_op = lambda w: jmv(w.ravel()).reshape(shape)  # noqa: E731
            deflated = _projected_solve(frame, apply_op, -f, coeff, rtol=1e-10)
            modes = frame.translation_modes
            h3 = box.h**3
            jt = [apply_op(t) for t in modes]
            block = np.array([[np.sum(t * j) * h3 for j in jt] for t in modes])
            rhs3 = np.array([-np.sum(t * f) * h3 for t in modes])
            eigs = np.linalg.eigvalsh(0.5 * (block + block.T))
            if np.min(np.abs(eigs)) > 1e-10 * np.max(np.abs(eigs)):
                alpha = np.linalg.solve(block, rhs3)
                for ai, t in zip(alpha, modes):
                    deflated = deflated + ai * t
            retry = backtrack(deflated)
            if retry is not None and (accepted is None or retry[3] < accepted[3]):
                accepted = retry
        if accepted is None:
            raise NoConvergence("line search failed to reduce the residual")
        _, u, f, fnorm = accepted
        n_iter += 1

    if float(np.max(u)) <= 0.0:
        raise LostPositivity("converged to a nonpositive field")
    interior_min = float(np.min(u[1:-1, 1:-1, 1:-1]))
    if interior_min < -1e-8 * float(np.max(u)):
        raise LostPositivity(f"interior minimum {interior_min:.3e} below tolerance")

    sol_field = Field3D(box, u)
    center = extract_center(frame, sol_field)
    corr = correction_against_profile(frame, sol_field, center)
    return ReducedSolution(
        frame=frame,
        field=sol_field,
        center=center,
        correction_norm=corr,
        residual_norm=fnorm,
        full_residual_norm=fnorm,
        energy=energy_functional(frame, sol_field),
        method="newton",
        n_iter=n_iter,
    )


def reduction_solution(frame: EpsilonFrame, tol: float = 1e-10) -> ReducedSolution:
    """Assemble U + phi from the contraction path as a ReducedSolution."""
    phi = reduce_fixed_point(frame, tol=tol)
    field = Field3D(frame.box, frame.U + phi.values)
    full = residual(frame, field).values
    # projected residual: remove the Lagrange-multiplier component, which is
    # the only part the constrained solve leaves behind
    h3 = frame.box.h**3
    duals = frame.mode_duals
    gram = np.array([[np.sum(a * b) * h3 for b in duals] for a in duals])
    coefs = np.linalg.solve(gram, [np.sum(w * full) * h3 for w in duals])
    proj = full - sum(ci * w for ci, w in zip(coefs, duals))
    return ReducedSolution(
        frame=frame,
        field=field,
        center=extract_center(frame, field),
        correction_norm=frame.eps**1.5 * star_norm(frame, phi.values),
        residual_norm=float(np.max(np.abs(proj))),
        full_residual_norm=float(np.max(np.abs(full))),
        energy=energy_functional(frame, field),
        method="reduction",
        n_iter=0,
    )


def minimize_center(gs: KirchhoffGroundState, potential: PotentialModel,
                    eps: float, delta: float, box: Optional[Box3D] = None,
                    coarse: int = 3, fp_tol: float = 1e-9,
                    coarse_tol: float = 1e-6,
                    xatol: float = 5e-4, maxfev: int = 48):
    """Locate the reduced-energy minimizer over the ball |y - x0| <= delta.

    Coarse grid scan of j(y) at a loose fixed-point tolerance, then
    Nelder-Mead refinement at the tight one; the fixed point is warm-started
    between evaluations (j is stationary in phi, so loose phi solves rank
    candidates correctly).  Raises BoundaryMinimizer if the minimum escapes
    to the boundary of the search region.
    """
    from scipy.optimize import minimize

    box = box or Box3D()
    x0 = potential.x0
    if delta > potential.local_radius():
        raise ValueError("search radius exceeds the potential's local radius")
    cache = {"phi": None}

    def j_of(y, tol):
        frame = EpsilonFrame(gs, potential, eps, y, box)
        phi = reduce_fixed_point(frame, tol=tol, phi0=cache["phi"])
        cache["phi"] = phi
        return energy_functional(frame, Field3D(box, frame.U + phi.values))

    ticks = np.linspace(-delta, delta, coarse)
    best_y, best_j, worst_j = None, np.inf, -np.inf
    for dx in ticks:
        for dy in ticks:
            for dz in ticks:
                y = x0 + np.array([dx, dy, dz])
                val = j_of(y, coarse_tol)
                worst_j = max(worst_j, val)
                if val < best_j:
                    best_y, best_j = y, val
    if worst_j - best_j <= 1e-12 * abs(best_j):
        raise DegenerateLandscape(
            f"all coarse centers tie at j = {best_j:.6e}; nothing to minimize"
        )

    res = minimize(
        lambda y: j_of(y, fp_tol),
        best_y,
        method="Nelder-Mead",
        options={
            "xatol": xatol,
            "fatol": abs(best_j) * 1e-14 if best_j != 0 else 1e-18,
            "maxfev": maxfev,
            "initial_simplex": _initial_simplex(best_y, max(0.2 * delta, 4 * xatol)),
        },
    )
    y_min = res.x
    if float(np.max(np.abs(y_min - x0))) >= 0.98 * delta:
        raise BoundaryMinimizer(f"minimizer {y_min} sits on the search boundary")
    return np.asarray(y_min), float(res.fun)


def _initial_simplex(y0: np.ndarray, scale: float) -> np.ndarray:
    simplex = np.tile(y0, (4, 1))
    for i in range(3):
        simplex[i + 1, i] += scale
    return simplex


def write_field(path, frame: EpsilonFrame, field: Field3D) -> None:
    """Flat float64 binary prefixed by one plain-text header line."""
    gs = frame.gs.params
    y_txt = ",".join(repr(float(v)) for v in frame.y)
    header = (
        f"kirchhoff-field L={frame.box.L!r} n={frame.box.n} eps={frame.eps!r} "
        f"y={y_txt} a={gs.a!r} b={gs.b!r} p={gs.p!r}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode())
        fh.write(field.values.astype("<f8").tobytes())


def read_field(path) -> Tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        header = fh.readline().decode().strip()
        raw = fh.read()
    meta = {}
    for item in header.split()[1:]:
        key, _, val = item.partition("=")
        if "," in val:
            meta[key] = [float(x) for x in val.split(",")]
        else:
            meta[key] = eval(val, {"__builtins__": {}})  # noqa: S307 - literals only
    n = int(meta["n"])
    values = np.frombuffer(raw, dtype="<f8").reshape((n, n, n)).copy()
    return meta, values


def slice_csv(path, field: Field3D, axis: int = 2, index: Optional[int] = None) -> None:
    """Dump one grid plane as CSV for plotting."""
    if index is None:
        index = field.box.n // 2
    plane = np.take(field.values, index, axis=axis)
    np.savetxt(path, plane, delimiter=",")
