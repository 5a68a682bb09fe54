"""Fourier representation of the interface and its velocity trace.

The unknown consists of the even/odd truncated series

    u(t) = sum_{n<N} u_n cos(nt)          Y(t) = sum_{n<N} Y_n cos(nt)
    v(t) = sum_{0<n<N} v_n sin(nt)        X(t) = t/k + sum_{0<n<N} X_n sin(nt)

plus the half-wavelength arclength L.  Only the periodic part of X is stored;
the secular slope t/k comes from the wavenumber at every evaluation site.
F = u + i v is the trace of the lower-layer holomorphic function on the
interface and Z = X + i Y the interface itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.typing import NDArray

from .params import PhysParams

FloatArray = NDArray[np.float64]


def _ro(a: FloatArray) -> FloatArray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SolutionVector:
    N: int
    u_hat: FloatArray  # modes 0..N-1
    v_hat: FloatArray  # modes 1..N-1
    X_hat: FloatArray  # modes 1..N-1
    Y_hat: FloatArray  # modes 0..N-1
    L: float

    def __post_init__(self) -> None:
        N = int(self.N)
        if N < 2:
            raise ValueError("resolution must be at least 2")
        object.__setattr__(self, "N", N)
        for name, size in (("u_hat", N), ("v_hat", N - 1), ("X_hat", N - 1), ("Y_hat", N)):
            arr = _ro(getattr(self, name))
            if arr.shape != (size,):
                raise ValueError(f"{name} must have shape ({size},), got {arr.shape}")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "L", float(self.L))
        if not self.L > 0:
            raise ValueError(f"arclength L must be positive, got {self.L}")

    @property
    def size(self) -> int:
        return 4 * self.N - 1

    def flatten(self) -> FloatArray:
        return np.concatenate([self.u_hat, self.v_hat, self.X_hat, self.Y_hat, [self.L]])

    @classmethod
    def unflatten(cls, phi: FloatArray, N: int) -> "SolutionVector":
        phi = np.asarray(phi, dtype=np.float64)
        if phi.shape != (4 * N - 1,):
            raise ValueError(f"flat vector must have length {4 * N - 1}, got {phi.shape}")
        i = np.cumsum([N, N - 1, N - 1, N])
        return cls(N, phi[: i[0]], phi[i[0] : i[1]], phi[i[1] : i[2]], phi[i[2] : i[3]], phi[-1])

    def replace(self, **changes) -> "SolutionVector":
        kw = dict(N=self.N, u_hat=self.u_hat, v_hat=self.v_hat, X_hat=self.X_hat,
                  Y_hat=self.Y_hat, L=self.L)
        kw.update(changes)
        return SolutionVector(**kw)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SolutionVector):
            return NotImplemented
        return self.N == other.N and np.array_equal(self.flatten(), other.flatten())

    def __hash__(self) -> int:
        return hash((self.N, self.flatten().tobytes()))

    @staticmethod
    def blocks(N: int) -> dict[str, slice]:
        """Index ranges of each coefficient family in the flattened vector."""
        return {
            "u_hat": slice(0, N),
            "v_hat": slice(N, 2 * N - 1),
            "X_hat": slice(2 * N - 1, 3 * N - 2),
            "Y_hat": slice(3 * N - 2, 4 * N - 2),
            "L": slice(4 * N - 2, 4 * N - 1),
        }


@dataclass(frozen=True)
class TraceSample:
    t: float
    X: float
    Y: float
    Xp: float
    Yp: float
    u: float
    v: float

    @property
    def F(self) -> complex:
        return complex(self.u, self.v)

    @property
    def Z(self) -> complex:
        return complex(self.X, self.Y)


@dataclass(frozen=True)
class Traces:
    """Vectorised interface traces at a set of parameter values."""

    t: FloatArray
    X: FloatArray
    Y: FloatArray
    Xp: FloatArray
    Yp: FloatArray
    u: FloatArray
    v: FloatArray

    @property
    def F(self) -> NDArray[np.complex128]:
        return self.u + 1j * self.v

    @property
    def Z(self) -> NDArray[np.complex128]:
        return self.X + 1j * self.Y

    @property
    def Zp(self) -> NDArray[np.complex128]:
        return self.Xp + 1j * self.Yp


class TrigTable:
    """cos(n t), sin(n t) and n for modes 0..N-1 at fixed points."""

    def __init__(self, t: FloatArray, N: int) -> None:
        self.t = np.asarray(t, dtype=np.float64)
        self.N = N
        n = np.arange(N, dtype=np.float64)
        nt = np.outer(self.t, n)
        self.n = n
        self.cos = np.cos(nt)
        self.sin = np.sin(nt)
        # derivative tables: d/dt cos = -n sin, d/dt sin = n cos
        self.dcos = -self.sin * n
        self.dsin = self.cos * n
        for a in (self.cos, self.sin, self.dcos, self.dsin):
            a.setflags(write=False)

    def traces(self, sol: SolutionVector, k: float) -> Traces:
        if sol.N != self.N:
            raise ValueError(f"table built for N={self.N}, solution has N={sol.N}")
        S, C, dS, dC = self.sin[:, 1:], self.cos, self.dsin[:, 1:], self.dcos
        return Traces(
            t=self.t,
            X=self.t / k + S @ sol.X_hat,
            Y=C @ sol.Y_hat,
            Xp=1.0 / k + dS @ sol.X_hat,
            Yp=dC @ sol.Y_hat,
            u=C @ sol.u_hat,
            v=S @ sol.v_hat,
        )


@dataclass(frozen=True, eq=False)
class CollocationGrid:
    """Quadrature mesh t_I = (I-1) pi/N, I=1..N+1, and midpoints (2J-1) pi/(2N)."""

    N: int
    mesh: FloatArray = field(init=False)
    midpoints: FloatArray = field(init=False)
    weights: FloatArray = field(init=False)

    def __post_init__(self) -> None:
        N = self.N
        object.__setattr__(self, "mesh", _ro(np.arange(N + 1) * math.pi / N))
        object.__setattr__(self, "midpoints", _ro((2 * np.arange(1, N + 1) - 1) * math.pi / (2 * N)))
        w = np.full(N + 1, math.pi / N)
        w[0] = w[-1] = 0.5 * math.pi / N
        object.__setattr__(self, "weights", _ro(w))

    @cached_property
    def mesh_table(self) -> TrigTable:
        return TrigTable(self.mesh, self.N)

    @cached_property
    def mid_table(self) -> TrigTable:
        return TrigTable(self.midpoints, self.N)


def evaluate_many(sol: SolutionVector, t: FloatArray, k: float) -> Traces:
    return TrigTable(np.atleast_1d(np.asarray(t, dtype=np.float64)), sol.N).traces(sol, k)


def evaluate(sol: SolutionVector, t: float, k: float) -> TraceSample:
    """Point evaluation of the interface, its derivative and the velocity trace."""
    tr = evaluate_many(sol, np.array([t]), k)
    return TraceSample(
        t=float(t), X=float(tr.X[0]), Y=float(tr.Y[0]), Xp=float(tr.Xp[0]),
        Yp=float(tr.Yp[0]), u=float(tr.u[0]), v=float(tr.v[0]),
    )


def amplitude(sol: SolutionVector) -> float:
    """Crest-to-trough height Y(0) - Y(pi)."""
    return float(2.0 * np.sum(sol.Y_hat[1::2]))


def reflect(sol: SolutionVector, params: PhysParams) -> tuple[SolutionVector, PhysParams]:
    """Map to the solution obtained by turning the channel upside down.

    The stream function maps as Psi(x, y) -> -Psi(x, 1 - y) with
    (H, omega0) -> (1 - H, 1 - omega0).  On the interface the physical
    velocity is unchanged, so the modified trace picks up the change of the
    shear offset: u -> u + (Y - H), v -> -v.
    """
    Y_new = -sol.Y_hat.copy()
    Y_new[0] = 1.0 - sol.Y_hat[0]
    u_new = sol.u_hat + sol.Y_hat
    u_new[0] = sol.u_hat[0] + sol.Y_hat[0] - params.H
    return (
        SolutionVector(sol.N, u_new, -sol.v_hat, sol.X_hat.copy(), Y_new, sol.L),
        params.reflected(),
    )


def resample(sol: SolutionVector, N_new: int) -> SolutionVector:
    """Zero-pad or truncate every coefficient family to resolution ``N_new``."""
    if N_new < 4:
        raise ValueError("resolution must be at least 4")
    if N_new == sol.N:
        return sol

    def fit(a: FloatArray, size: int) -> FloatArray:
        out = np.zeros(size)
        m = min(size, a.size)
        out[:m] = a[:m]
        return out

    return SolutionVector(
        N_new,
        fit(sol.u_hat, N_new),
        fit(sol.v_hat, N_new - 1),
        fit(sol.X_hat, N_new - 1),
        fit(sol.Y_hat, N_new),
        sol.L,
    )


def decay_metric(sol: SolutionVector) -> float:
    """Largest tail-to-peak coefficient ratio over the four families.

    The tail is the top quarter of mode indices.  Zero-modes are included in
    the peak for u and Y; a flat interface therefore gives exactly 0.
    """
    if sol.N < 8:
        raise ValueError("decay metric needs N >= 8")
    worst = 0.0
    # index arrays carry the mode number of each stored entry
    for coef, first in ((sol.u_hat, 0), (sol.v_hat, 1), (sol.X_hat, 1), (sol.Y_hat, 0)):
        modes = np.arange(first, first + coef.size)
        tail = np.abs(coef[modes >= sol.N - sol.N // 4])
        peak = max(np.max(np.abs(coef)), 1e-300)
        worst = max(worst, float(np.max(tail, initial=0.0)) / peak)
    return worst
