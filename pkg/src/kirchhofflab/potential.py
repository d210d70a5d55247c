"""Potential models: bounded continuous wells with a strict local minimum.

The local behavior near the well bottom x0 is a separable power law
V = V(x0) + sum_i c_i |x_i - x0_i|^m, optionally tilted by a cubic term
that breaks the reflection symmetry (the pure power well is even in every
coordinate, which pins the concentration point exactly at x0 and hides the
o(eps) drift).  Beyond the cap radius the well blends smoothly into a
constant plateau so the model stays bounded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class NotDifferentiable(Exception):
    """Gradient requested where the model does not define one."""


_KINDS = ("constant", "power_well", "holder_well", "table")


@dataclass(frozen=True)
class PotentialModel:
    kind: str
    x0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    m: float = 2.0
    coeffs: np.ndarray = field(default_factory=lambda: np.ones(3))
    tilt: np.ndarray = field(default_factory=lambda: np.zeros(3))
    alpha: float = 1.0
    kappa: float = 1.0
    r_cap: float = 5.0
    blend_width: float = 5.0
    table: Optional[dict] = None  # {"points": (n,3), "values": (n,)}

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(3))
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float).reshape(3))
        object.__setattr__(self, "tilt", np.asarray(self.tilt, dtype=float).reshape(3))
        if self.kind == "power_well":
            if self.m <= 1.0:
                raise ValueError("power-well exponent must exceed 1")
            if np.any(self.coeffs == 0.0):
                raise ValueError("power-well coefficients must be nonzero")
        if self.kind == "holder_well" and not 0.0 < self.alpha <= 1.0:
            raise ValueError("Holder order must lie in (0, 1]")

    @property
    def plateau(self) -> float:
        if self.kind == "constant":
            return 1.0
        if self.kind == "power_well":
            return 1.0 + float(
                np.sum(np.abs(self.coeffs)) * self.r_cap**self.m
                + np.sum(np.abs(self.tilt)) * self.r_cap**3
            )
        if self.kind == "holder_well":
            return 1.0 + self.kappa * self.r_cap**self.alpha
        return float(np.max(self.table["values"]))

    @property
    def floor(self) -> float:
        if self.kind == "table":
            return float(np.min(self.table["values"]))
        return 1.0

    def local_radius(self) -> float:
        """Radius inside which the local model is exact (no cap blending)."""
        return self.r_cap


def constant_potential() -> PotentialModel:
    return PotentialModel(kind="constant")


def power_well(coeffs=(1.0, 1.0, 1.0), m: float = 2.0, x0=(0.0, 0.0, 0.0),
               tilt=(0.0, 0.0, 0.0), r_cap: float = 5.0) -> PotentialModel:
    return PotentialModel(kind="power_well", x0=np.asarray(x0, float), m=m,
                          coeffs=np.asarray(coeffs, float),
                          tilt=np.asarray(tilt, float), r_cap=r_cap)


def holder_well(alpha: float, kappa: float = 1.0, x0=(0.0, 0.0, 0.0),
                r_cap: float = 5.0) -> PotentialModel:
    return PotentialModel(kind="holder_well", x0=np.asarray(x0, float),
                          alpha=alpha, kappa=kappa, r_cap=r_cap)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


def _smoothstep_d(t: np.ndarray) -> np.ndarray:
    inside = (t > 0.0) & (t < 1.0)
    return np.where(inside, 30.0 * t**2 * (1.0 - t) ** 2, 0.0)


def _local_value(model: PotentialModel, dx: np.ndarray) -> np.ndarray:
    if model.kind == "power_well":
        v = 1.0 + np.abs(dx) ** model.m @ model.coeffs + dx**3 @ model.tilt
        return v
    if model.kind == "holder_well":
        r = np.linalg.norm(dx, axis=-1)
        return 1.0 + model.kappa * r**model.alpha
    raise AssertionError


def eval_V(model: PotentialModel, x) -> np.ndarray:
    """Evaluate V at one point (3,) or a batch (n, 3)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if model.kind == "constant":
        out = np.ones(pts.shape[0])
    elif model.kind == "table":
        from scipy.interpolate import griddata

        out = griddata(model.table["points"], model.table["values"], pts,
                       method="linear", fill_value=float(np.mean(model.table["values"])))
    else:
        dx = pts - model.x0
        rho = np.linalg.norm(dx, axis=-1)
        local = _local_value(model, dx)
        s = _smoothstep((rho - model.r_cap) / model.blend_width)
        out = (1.0 - s) * local + s * model.plateau
    return float(out[0]) if single else out


def eval_gradV(model: PotentialModel, x) -> np.ndarray:
    """Analytic gradient of V; exact inside the cap radius."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if model.kind == "table":
        raise NotDifferentiable("tabulated potentials define no gradient")
    if model.kind == "constant":
        grad = np.zeros_like(pts)
        return grad[0] if single else grad

    dx = pts - model.x0
    rho = np.linalg.norm(dx, axis=-1)
    if model.kind == "power_well":
        grad_local = (
            model.m * model.coeffs * np.abs(dx) ** (model.m - 2.0) * dx
            + 3.0 * model.tilt * dx**2
        )
    else:
        if np.any(rho == 0.0):
            raise NotDifferentiable("Holder well has no gradient at its vertex")
        grad_local = (
            model.kappa * model.alpha
            * rho[:, None] ** (model.alpha - 2.0) * dx
        )
    local = _local_value(model, dx)
    t = (rho - model.r_cap) / model.blend_width
    s = _smoothstep(t)
    ds = _smoothstep_d(t) / model.blend_width
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(rho[:, None] > 0.0, dx / np.maximum(rho, 1e-300)[:, None], 0.0)
    grad = (1.0 - s)[:, None] * grad_local + (ds * (model.plateau - local))[:, None] * unit
    return grad[0] if single else grad
