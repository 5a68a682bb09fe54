"""The discrete nonlinear system G(phi) = 0 of dimension 4N - 1.

Rows, in order: real part of the lower-layer Cauchy identity at midpoints
2..N, real part of the upper-layer identity at midpoints 2..N, the
differentiated kinematic condition at midpoints 2..N, the constant-speed
condition at all N midpoints, the average-depth condition and one closure
equation.  Integrals over t in [0, pi] use the trapezium rule on the mesh;
the kernel's pole sits on a midpoint, where the alternating-point rule
returns the principal value with spectral accuracy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .errors import Inadmissible, PoleProximity
from .params import PhysParams
from .state import CollocationGrid, SolutionVector, Traces, amplitude, evaluate_many

Gauge = Literal["shifted", "printed"]
ComplexArray = NDArray[np.complex128]

POLE_TOL = 1e-13


@dataclass(frozen=True, eq=False)
class ClosureSpec:
    kind: Literal["amplitude", "distance"]
    A: float = 0.0
    anchor: NDArray[np.float64] | None = None
    d: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("amplitude", "distance"):
            raise ValueError(f"unknown closure kind {self.kind!r}")
        if self.kind == "distance":
            if self.anchor is None:
                raise ValueError("distance closure needs an anchor vector")
            if not self.d > 0:
                raise ValueError("distance closure needs d > 0")
            a = np.array(self.anchor, dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, "anchor", a)

    @classmethod
    def amplitude_target(cls, A: float) -> "ClosureSpec":
        return cls("amplitude", A=float(A))

    @classmethod
    def distance_from(cls, anchor: NDArray[np.float64], d: float) -> "ClosureSpec":
        return cls("distance", anchor=anchor, d=float(d))


@dataclass(frozen=True)
class ResidualReport:
    vector: NDArray[np.float64]
    max_abs: float
    unused_point_residual: NDArray[np.float64]  # lower, upper, kinematic at the first midpoint


def _pole_guard(a: ComplexArray, d1: ComplexArray, d2: ComplexArray) -> None:
    scale = POLE_TOL * (1.0 + np.abs(a) ** 2)
    if np.any(np.abs(d1) < scale) or np.any(np.abs(d2) < scale):
        raise PoleProximity("Cauchy kernel evaluated at a pole")


def _g_exp(a: ComplexArray, b: ComplexArray, guard: bool = True) -> ComplexArray:
    """Kernel in exponential variables a = exp(ikz), b = exp(ikw).

    Algebraically identical to
    1/((1/a - b)(1/a - 1/b)) - 1/((a - b)(a - 1/b)) = b (a^2 - 1) / ((1 - ab)(b - a)).
    """
    d1 = 1.0 - a * b
    d2 = b - a
    if guard:
        _pole_guard(a, d1, d2)
    return b * (a * a - 1.0) / (d1 * d2)


def kernel_g(z, w, k: float):
    """Periodic Cauchy kernel g(z, w) with period 2 pi / k in both arguments."""
    a = np.exp(1j * k * np.asarray(z, dtype=np.complex128))
    b = np.exp(1j * k * np.asarray(w, dtype=np.complex128))
    out = _g_exp(a, b)
    return complex(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class Kernels:
    """The four kernel matrices (midpoints x mesh) for one interface geometry."""

    lower_direct: ComplexArray  # g(Z_I, Z*_J)
    lower_image: ComplexArray  # g(-conj Z_I, Z*_J)
    upper_direct: ComplexArray  # g(i - Z_I, Z*_J - i)
    upper_image: ComplexArray  # g(i + conj Z_I, Z*_J - i)


def build_kernels(Z_src: ComplexArray, Z_tgt: ComplexArray, k: float, *, guard: bool = True) -> Kernels:
    a = np.exp(1j * k * Z_src)[None, :]
    b = np.exp(1j * k * Z_tgt)[:, None]
    ac = np.conj(a)
    ek = math.exp(-k)
    bu = b / ek
    return Kernels(
        _g_exp(a, b, guard),
        _g_exp(ac, b, guard),
        _g_exp(ek / a, bu, guard),
        _g_exp(ek / ac, bu, guard),
    )


def _identity_rows(
    kern: Kernels,
    mesh: Traces,
    mid: Traces,
    weights: NDArray[np.float64],
    params: PhysParams,
    F_mesh: ComplexArray | None = None,
    F_mid: ComplexArray | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Real parts of both identities at every midpoint.

    ``F_mesh``/``F_mid`` override the traces and may carry a trailing batch
    axis (used to evaluate many velocity perturbations at fixed geometry).
    """
    k = params.k
    F = mesh.F if F_mesh is None else F_mesh
    Fs = mid.F if F_mid is None else F_mid
    batched = F.ndim == 2
    wZp = weights * mesh.Zp
    wZpc = np.conj(wZp)
    shift = mesh.Y - params.H
    shift_mid = mid.Y - params.H
    if batched:
        wZp, wZpc, shift, shift_mid = wZp[:, None], wZpc[:, None], shift[:, None], shift_mid[:, None]
    Fc = np.conj(F)
    lower = Fs + (k / math.pi) * (kern.lower_direct @ (F * wZp) + kern.lower_image @ (Fc * wZpc))
    F1, F1c = F + shift, Fc + shift
    upper = Fs + shift_mid + (k / math.pi) * (
        kern.upper_direct @ (F1 * wZp) + kern.upper_image @ (F1c * wZpc)
    )
    return lower.real, upper.real


def _kinematic(mid: Traces, params: PhysParams, gauge: Gauge, u=None, v=None):
    u = mid.u if u is None else u
    v = mid.v if v is None else v
    offset = mid.Y - params.H if gauge == "shifted" else mid.Y
    if np.ndim(u) == 2:
        return mid.Xp[:, None] * v + mid.Yp[:, None] * (u + params.omega0 * offset[:, None])
    return mid.Xp * v + mid.Yp * (u + params.omega0 * offset)


def closure_residual(sol: SolutionVector, closure: ClosureSpec) -> float:
    if closure.kind == "amplitude":
        return amplitude(sol) - closure.A
    diff = sol.flatten() - closure.anchor
    return float(diff @ diff - closure.d**2)


class ResidualSystem:
    """Evaluates G for fixed parameters, resolution, closure and gauge.

    Holds no mutable state beyond cached trigonometric tables, so one
    instance can be shared between threads.
    """

    def __init__(self, params: PhysParams, N: int, closure: ClosureSpec,
                 gauge: Gauge = "shifted", grid: CollocationGrid | None = None) -> None:
        if gauge not in ("shifted", "printed"):
            raise ValueError(f"unknown kinematic gauge {gauge!r}")
        self.params = params
        self.N = N
        self.closure = closure
        self.gauge = gauge
        self.grid = grid if grid is not None and grid.N == N else CollocationGrid(N)

    @property
    def size(self) -> int:
        return 4 * self.N - 1

    def traces(self, sol: SolutionVector) -> tuple[Traces, Traces]:
        k = self.params.k
        return self.grid.mesh_table.traces(sol, k), self.grid.mid_table.traces(sol, k)

    def kernels(self, mesh: Traces, mid: Traces, guard: bool = True) -> Kernels:
        return build_kernels(mesh.Z, mid.Z, self.params.k, guard=guard)

    def full_rows(self, sol: SolutionVector, kern: Kernels | None = None,
                  mesh: Traces | None = None, mid: Traces | None = None):
        """All rows including the first midpoint: (lower, upper, kinematic, speed, depth, closure)."""
        if mesh is None or mid is None:
            mesh, mid = self.traces(sol)
        if kern is None:
            kern = self.kernels(mesh, mid)
        lower, upper = _identity_rows(kern, mesh, mid, self.grid.weights, self.params)
        kin = _kinematic(mid, self.params, self.gauge)
        speed = mid.Xp**2 + mid.Yp**2 - (sol.L / math.pi) ** 2
        depth = float(self.grid.weights @ (mesh.Y * mesh.Xp)) - math.pi * self.params.H / self.params.k
        clos = closure_residual(sol, self.closure)
        return lower, upper, kin, speed, depth, clos

    def residual(self, sol: SolutionVector, kern: Kernels | None = None,
                 mesh: Traces | None = None, mid: Traces | None = None) -> NDArray[np.float64]:
        lower, upper, kin, speed, depth, clos = self.full_rows(sol, kern, mesh, mid)
        return np.concatenate([lower[1:], upper[1:], kin[1:], speed, [depth, clos]])

    def report(self, sol: SolutionVector) -> ResidualReport:
        lower, upper, kin, speed, depth, clos = self.full_rows(sol)
        vec = np.concatenate([lower[1:], upper[1:], kin[1:], speed, [depth, clos]])
        return ResidualReport(
            vector=vec,
            max_abs=float(np.max(np.abs(vec))),
            unused_point_residual=np.array([lower[0], upper[0], kin[0]]),
        )

    def velocity_perturbed(self, sol: SolutionVector, kern: Kernels, mesh: Traces, mid: Traces,
                           dF_mesh: ComplexArray, dF_mid: ComplexArray,
                           dphi: NDArray[np.float64]) -> NDArray[np.float64]:
        """Residuals at sol + (batch of velocity-only perturbations).

        Geometry is unchanged, so the kernels of ``sol`` are reused.  Column j
        of the result is G(phi + dphi[:, j]).
        """
        F = mesh.F[:, None] + dF_mesh
        Fs = mid.F[:, None] + dF_mid
        lower, upper = _identity_rows(kern, mesh, mid, self.grid.weights, self.params, F, Fs)
        kin = _kinematic(mid, self.params, self.gauge, Fs.real, Fs.imag)
        m = dF_mesh.shape[1]
        speed = np.broadcast_to((mid.Xp**2 + mid.Yp**2 - (sol.L / math.pi) ** 2)[:, None], (self.N, m))
        depth = float(self.grid.weights @ (mesh.Y * mesh.Xp)) - math.pi * self.params.H / self.params.k
        if self.closure.kind == "amplitude":
            clos = np.full(m, amplitude(sol) - self.closure.A)
        else:
            diff = (sol.flatten() - self.closure.anchor)[:, None] + dphi
            clos = np.sum(diff * diff, axis=0) - self.closure.d**2
        return np.vstack([lower[1:], upper[1:], kin[1:], speed, np.full((1, m), depth), clos[None, :]])


# --- row-level API -----------------------------------------------------------

def _single_row(sol, params, grid, J, which):
    if not 1 <= J <= sol.N:
        raise ValueError(f"midpoint index must lie in 1..{sol.N}")
    k = params.k
    mesh = grid.mesh_table.traces(sol, k)
    mid = evaluate_many(sol, grid.midpoints[J - 1 : J], k)
    kern = build_kernels(mesh.Z, mid.Z, k)
    lower, upper = _identity_rows(kern, mesh, mid, grid.weights, params)
    return float((lower if which == "lower" else upper)[0])


def lower_identity_residual(sol: SolutionVector, params: PhysParams, grid: CollocationGrid, J: int) -> float:
    """Re[F(tau_J) + (k/pi) Q] for the lower layer at midpoint J (1-based)."""
    return _single_row(sol, params, grid, J, "lower")


def upper_identity_residual(sol: SolutionVector, params: PhysParams, grid: CollocationGrid, J: int) -> float:
    return _single_row(sol, params, grid, J, "upper")


def kinematic_residual(sol: SolutionVector, params: PhysParams, J: int, gauge: Gauge = "shifted") -> float:
    grid = CollocationGrid(sol.N)
    mid = evaluate_many(sol, grid.midpoints[J - 1 : J], params.k)
    return float(_kinematic(mid, params, gauge)[0])


def speed_residual(sol: SolutionVector, J: int, k: float) -> float:
    """X'^2 + Y'^2 - (L/pi)^2 at midpoint J.  ``k`` supplies the secular slope of X."""
    grid = CollocationGrid(sol.N)
    mid = evaluate_many(sol, grid.midpoints[J - 1 : J], k)
    return float(mid.Xp[0] ** 2 + mid.Yp[0] ** 2 - (sol.L / math.pi) ** 2)


def depth_residual(sol: SolutionVector, params: PhysParams, grid: CollocationGrid) -> float:
    mesh = grid.mesh_table.traces(sol, params.k)
    return float(grid.weights @ (mesh.Y * mesh.Xp)) - math.pi * params.H / params.k


def assemble_residual(sol: SolutionVector, params: PhysParams, grid: CollocationGrid | None,
                      closure: ClosureSpec, gauge: Gauge = "shifted", *,
                      check: bool = True) -> ResidualReport:
    if check:
        adm = admissibility(sol, params)
        if not adm.ok:
            raise Inadmissible(adm.reason)
    return ResidualSystem(params, sol.N, closure, gauge, grid).report(sol)


# --- admissibility -----------------------------------------------------------

@dataclass(frozen=True)
class AdmissibilityReport:
    ok: bool
    reason: str
    lower_clearance: float  # min Y
    upper_clearance: float  # min 1 - Y
    min_parametrisation_speed: float
    min_interface_speed: float
    min_sigma: float

    def __bool__(self) -> bool:
        return self.ok


def _segments_cross(P: NDArray[np.float64]) -> bool:
    """True if any two non-adjacent segments of the polyline P (m x 2) intersect."""
    A, B = P[:-1], P[1:]
    m = len(A)
    # bounding-box prefilter on all pairs with index gap >= 2
    lo, hi = np.minimum(A, B), np.maximum(A, B)
    i, j = np.triu_indices(m, k=2)
    keep = np.all((lo[i] <= hi[j]) & (lo[j] <= hi[i]), axis=1)
    i, j = i[keep], j[keep]
    if i.size == 0:
        return False

    def orient(p, q, r):
        return (q[:, 0] - p[:, 0]) * (r[:, 1] - p[:, 1]) - (q[:, 1] - p[:, 1]) * (r[:, 0] - p[:, 0])

    o1 = orient(A[i], B[i], A[j])
    o2 = orient(A[i], B[i], B[j])
    o3 = orient(A[j], B[j], A[i])
    o4 = orient(A[j], B[j], B[i])
    return bool(np.any((o1 * o2 < 0) & (o3 * o4 < 0)))


def admissibility(sol: SolutionVector, params: PhysParams, samples: int | None = None) -> AdmissibilityReport:
    """Check wall clearance, regular parametrisation, no self-intersection and
    no stagnation on the interface.  Never raises."""
    M = samples or max(16 * sol.N, 512)
    t = np.linspace(0.0, math.pi, M + 1)
    tr = evaluate_many(sol, t, params.k)
    lower = float(np.min(tr.Y))
    upper = float(np.min(1.0 - tr.Y))
    par_speed = float(np.min(np.hypot(tr.Xp, tr.Yp)))
    int_speed = float(np.min(np.hypot(tr.u + params.omega0 * (tr.Y - params.H), tr.v)))

    # divided differences over two periods, coarse enough for an M^2 table
    ts = np.linspace(0.0, 4.0 * math.pi, 4 * min(M, 256) + 1)
    ts2 = evaluate_many(sol, ts, params.k)
    Z = ts2.Z
    dt = ts[:, None] - ts[None, :]
    np.fill_diagonal(dt, 1.0)
    sig = np.abs((Z[:, None] - Z[None, :]) / dt)
    np.fill_diagonal(sig, np.hypot(ts2.Xp, ts2.Yp))
    min_sigma = float(np.min(sig))

    def rep(ok, reason):
        return AdmissibilityReport(ok, reason, lower, upper, par_speed, int_speed, min_sigma)

    if not np.all(np.isfinite(sol.flatten())):
        return rep(False, "non-finite coefficients")
    if lower <= 0.0:
        return rep(False, "wall: interface touches or crosses the lower wall")
    if upper <= 0.0:
        return rep(False, "wall: interface touches or crosses the upper wall")
    if par_speed <= 0.0:
        return rep(False, "parametrisation: X'^2 + Y'^2 vanishes")
    if min_sigma <= 0.0 or _segments_cross(np.column_stack([ts2.X, ts2.Y])):
        return rep(False, "self-intersection: interface crosses itself")
    if int_speed <= 0.0:
        return rep(False, "stagnation: fluid velocity vanishes on the interface")
    return rep(True, "ok")
