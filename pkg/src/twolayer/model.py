"""Closed-form objects: shear flows, the dispersion relation, the linearised
kernel at a shear flow, and conjugate-flow algebra for periodic bores."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import PhysParams
from .state import SolutionVector, amplitude


@dataclass(frozen=True)
class ShearFlow:
    h: float
    c: float

    def __post_init__(self) -> None:
        if not 0.0 < self.h < 1.0:
            raise ValueError(f"interface height must lie in (0, 1), got {self.h}")


@dataclass(frozen=True)
class EigenComponents:
    n: int
    c1: float
    c2: float
    c3: float
    c4: float
    q_n: float


def _coth(x: float) -> float:
    return 1.0 / math.tanh(x)


def dispersion(params: PhysParams, n: int = 1) -> float:
    """Critical value of q at which mode ``n`` bifurcates from the shear flows."""
    if n < 1:
        raise ValueError("mode index must be a positive integer")
    nk = n * params.k
    return 1.0 / (nk * (_coth(nk * (1.0 - params.H)) + _coth(nk * params.H))) - 0.5 * params.omega0 * params.H


def critical_speed(params: PhysParams, n: int = 1) -> float:
    """Interface speed of the shear flow at the bifurcation point (q + omega0 H / 2)."""
    nk = n * params.k
    return 1.0 / (nk * (_coth(nk * (1.0 - params.H)) + _coth(nk * params.H)))


def eigen_components(params: PhysParams, n: int = 1) -> EigenComponents:
    k, H = params.k, params.H
    a, b = n * H * k, n * (1.0 - H) * k
    s = _coth(a) + _coth(b)
    return EigenComponents(
        n=n,
        c1=-1.0 / s,
        c2=math.sinh(a) / math.sinh(b),
        c3=k * math.sinh(a) / math.sinh(n) * s,
        c4=-math.sinh(a) / (math.sinh(b) * s),
        q_n=dispersion(params, n),
    )


def shear_solution(params: PhysParams, c: float, N: int) -> SolutionVector:
    """Flat interface at height H carrying the uniform trace u = c."""
    u = np.zeros(N)
    u[0] = c
    Y = np.zeros(N)
    Y[0] = params.H
    return SolutionVector(N, u, np.zeros(N - 1), np.zeros(N - 1), Y, math.pi / params.k)


def linear_guess(params: PhysParams, A: float, N: int, *, crude: bool = False) -> SolutionVector:
    """First-order bifurcating solution with amplitude ``A``.

    The interface is H + (A/2) cos t.  The velocity traces are the interface
    values of the lower-layer kernel vector with the shear offset
    omega0 (Y - H) removed; at first order the constant-speed parametrisation
    has no horizontal correction, so X_1 = 0.  ``crude=True`` keeps only the
    interface perturbation.
    """
    if N < 8:
        raise ValueError("linear_guess needs N >= 8")
    c0 = dispersion(params, 1) + 0.5 * params.omega0 * params.H
    sol = shear_solution(params, c0, N)
    if A == 0.0:
        return sol
    eta = 0.5 * A
    Y = sol.Y_hat.copy()
    Y[1] = eta
    if crude:
        return sol.replace(Y_hat=Y)
    ec = eigen_components(params, 1)
    kH = params.k * params.H
    # kernel vector normalised so its interface displacement sinh(kH) equals eta
    lam = eta / math.sinh(kH)
    u_trace = lam * (ec.c1 * math.cosh(kH) + params.omega0 * math.sinh(kH))
    v_trace = lam * ec.c1 * math.sinh(kH)
    u = sol.u_hat.copy()
    v = sol.v_hat.copy()
    u[1] = u_trace - params.omega0 * eta
    v[0] = -v_trace
    return sol.replace(u_hat=u, v_hat=v, Y_hat=Y)


def conjugate_height(h: float, omega0: float) -> float:
    return -h + (2.0 / 3.0) * (2.0 - omega0)


def conjugate_speed(h: float, omega0: float) -> float:
    return (3.0 * h + omega0 - 2.0) ** 2 / 9.0 + h * (1.0 - h)


def min_bore_amplitude(params: PhysParams) -> float:
    """Lower bound on the amplitude of a periodic bore."""
    return 2.0 * abs(params.H - (2.0 - params.omega0) / 3.0)


def shear_stream_function(y, h: float, c: float, omega0: float):
    """Stream function of the shear flow with interface height h and interface speed c.

    Vanishes on the interface; Psi_y = omega_j (y - h) + c in each layer.
    """
    y = np.asarray(y, dtype=np.float64)
    w = np.where(y <= h, omega0, omega0 - 1.0)
    return 0.5 * w * (y - h) ** 2 + c * (y - h)


__all__ = [
    "EigenComponents",
    "PhysParams",
    "ShearFlow",
    "amplitude",
    "conjugate_height",
    "conjugate_speed",
    "critical_speed",
    "dispersion",
    "eigen_components",
    "linear_guess",
    "min_bore_amplitude",
    "shear_solution",
    "shear_stream_function",
]
