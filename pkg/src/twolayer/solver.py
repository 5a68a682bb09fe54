"""Damped Newton iteration with a forward-difference Jacobian and Jacobian freezing."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .errors import Inadmissible, NonConvergence, PoleProximity, SingularJacobian
from .params import PhysParams
from .residual import ClosureSpec, Gauge, ResidualSystem, admissibility
from .state import CollocationGrid, SolutionVector

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NewtonOptions:
    tol_residual: float = 1e-10
    jacobian_reuse_threshold: float = 1e-4
    max_iterations: int = 40
    fd_step: float = 1e-8  # about sqrt(eps): truncation and round-off balance
    damping: float = 0.5
    max_backtracks: int = 8
    max_condition: float = 1e14
    check_admissibility: bool = True
    workers: int = 1
    jacobian: Literal["analytic", "fd"] = "analytic"

    def __post_init__(self) -> None:
        if not 0 < self.tol_residual < self.jacobian_reuse_threshold:
            raise ValueError("need 0 < tol_residual < jacobian_reuse_threshold")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        if not 0 < self.damping < 1:
            raise ValueError("damping factor must lie in (0, 1)")
        if self.jacobian not in ("analytic", "fd"):
            raise ValueError(f"unknown Jacobian kind {self.jacobian!r}")


@dataclass(frozen=True)
class NewtonResult:
    solution: SolutionVector
    iterations: int
    final_residual: float
    jacobian_builds: int
    history: tuple[float, ...]


def _geometric_column(system: ResidualSystem, phi, base, j, h, N):
    for attempt in range(2):
        e = phi.copy()
        e[j] += h
        try:
            return (system.residual(SolutionVector.unflatten(e, N)) - base) / h
        except PoleProximity:
            h /= 10.0
    raise PoleProximity(f"pole hit while differencing column {j}")


def fd_jacobian_system(system: ResidualSystem, sol: SolutionVector, opts: NewtonOptions,
                       base: NDArray[np.float64] | None = None) -> NDArray[np.float64]:
    """Forward-difference Jacobian, column j = (G(phi + h_j e_j) - G(phi)) / h_j.

    Velocity coefficients leave the interface geometry unchanged, so their
    perturbed residuals are evaluated in one batch against the cached
    kernels.  Geometry columns rebuild the kernels one at a time.
    """
    N = sol.N
    phi = sol.flatten()
    h = opts.fd_step * np.maximum(1.0, np.abs(phi))
    mesh, mid = system.traces(sol)
    kern = system.kernels(mesh, mid)
    if base is None:
        base = system.residual(sol, kern, mesh, mid)
    n = 4 * N - 1
    Jac = np.empty((n, n))
    blk = SolutionVector.blocks(N)

    # u and v columns, batched
    cm, sm = system.grid.mesh_table, system.grid.mid_table
    hu, hv = h[blk["u_hat"]], h[blk["v_hat"]]
    dF_mesh = np.hstack([cm.cos * hu, 1j * _sine_columns(cm) * hv])
    dF_mid = np.hstack([sm.cos * hu, 1j * _sine_columns(sm) * hv])
    nv = 2 * N - 1
    dphi = np.zeros((n, nv))
    dphi[np.arange(nv), np.arange(nv)] = h[:nv]
    pert = system.velocity_perturbed(sol, kern, mesh, mid, dF_mesh, dF_mid, dphi)
    Jac[:, :nv] = (pert - base[:, None]) / h[:nv]

    # L only enters the speed rows (and a distance closure): geometry unchanged
    jL = n - 1
    e = phi.copy()
    e[jL] += h[jL]
    Jac[:, jL] = (system.residual(SolutionVector.unflatten(e, N), kern, mesh, mid) - base) / h[jL]

    cols = range(nv, n - 1)
    if opts.workers > 1:
        with ThreadPoolExecutor(opts.workers) as pool:
            results = list(pool.map(lambda j: _geometric_column(system, phi, base, j, h[j], N), cols))
    else:
        results = [_geometric_column(system, phi, base, j, h[j], N) for j in cols]
    for j, col in zip(cols, results):
        Jac[:, j] = col
    return Jac


def _dense(a: NDArray[np.float64]) -> NDArray[np.float64]:
    # real/imag views are strided; BLAS wants contiguous operands
    return np.ascontiguousarray(a)


def _g_parts(a: NDArray[np.complex128], b: NDArray[np.complex128]):
    """g(a, b) together with a dg/da and b dg/db."""
    d1 = 1.0 - a * b
    d2 = b - a
    g = b * (a * a - 1.0) / (d1 * d2)
    ab = a * b / d1
    ga = g * (2.0 * a * a / (a * a - 1.0) + ab + a / d2)
    gb = g * (1.0 + ab - b / d2)
    return g, ga, gb


def _identity_jacobian(a, ac, b, alpha, alpha_c, G, w, Zp, tabs, c, k, upper):
    """Derivative of the real part of one Cauchy identity with respect to all unknowns.

    ``a``/``ac`` are the exponential source variables of the direct and image
    kernels, ``alpha``/``alpha_c`` the factors d(log a)/dZ and
    d(log ac)/d(conj Z).  Returns the (midpoints x unknowns) block without
    the L column.
    """
    mt, dt = tabs
    K, KA, KB = _g_parts(a, b)
    M, MA, MB = _g_parts(ac, b)
    wZp = w * Zp
    q = G * wZp
    qc = np.conj(q)
    P1 = c * alpha * KA * q
    R1 = c * alpha_c * MA * qc
    P2 = c * K * (G * w)
    R2 = c * M * (np.conj(G) * w)
    T = c * 1j * k * ((KB * q).sum(axis=1) + (MB * qc).sum(axis=1))
    Kz = c * K * wZp
    Mz = c * M * np.conj(wZp)

    C, S, dC, dS = mt.cos, mt.sin[:, 1:], mt.dcos, mt.dsin[:, 1:]
    Cm, Sm = dt.cos, dt.sin[:, 1:]
    re, im = np.real, np.imag
    vel = _dense(re(Kz + Mz))
    cols_u = vel @ C + Cm
    cols_v = _dense(im(Mz - Kz)) @ S
    cols_X = _dense(re(P1 + R1)) @ S + _dense(re(P2 + R2)) @ dS + T.real[:, None] * Sm
    cols_Y = _dense(im(R1 - P1)) @ C + _dense(im(R2 - P2)) @ dC - T.imag[:, None] * Cm
    if upper:
        cols_Y += vel @ C + Cm
    return np.hstack([cols_u, cols_v, cols_X, cols_Y])


def analytic_jacobian(system: ResidualSystem, sol: SolutionVector) -> NDArray[np.float64]:
    """Exact derivative of G, built from closed-form kernel derivatives.

    Agrees with :func:`fd_jacobian_system` to finite-difference accuracy but
    costs a handful of dense products instead of 2N kernel rebuilds.
    """
    params, N, grid = system.params, sol.N, system.grid
    k, c = params.k, params.k / math.pi
    mesh, mid = system.traces(sol)
    system.kernels(mesh, mid)  # pole guard
    mt, dt = grid.mesh_table, grid.mid_table
    a = np.exp(1j * k * mesh.Z)[None, :]
    b = np.exp(1j * k * mid.Z)[:, None]
    ac = np.conj(a)
    ek = math.exp(-k)
    w = grid.weights
    lower = _identity_jacobian(a, ac, b, 1j * k, -1j * k, mesh.F, w, mesh.Zp, (mt, dt), c, k, False)
    G1 = mesh.F + (mesh.Y - params.H)
    upper = _identity_jacobian(ek / a, ek / ac, b / ek, -1j * k, 1j * k, G1, w, mesh.Zp,
                               (mt, dt), c, k, True)

    n = 4 * N - 1
    Jac = np.zeros((n, n))
    blk = SolutionVector.blocks(N)
    m = N - 1
    Jac[0:m, : n - 1] = lower[1:]
    Jac[m:2 * m, : n - 1] = upper[1:]

    # kinematic rows
    offset = mid.Y - params.H if system.gauge == "shifted" else mid.Y
    rows = slice(2 * m, 3 * m)
    Cm, Sm, dCm, dSm = dt.cos[1:], dt.sin[1:, 1:], dt.dcos[1:], dt.dsin[1:, 1:]
    Xp, Yp, u, v = mid.Xp[1:], mid.Yp[1:], mid.u[1:], mid.v[1:]
    Jac[rows, blk["u_hat"]] = Yp[:, None] * Cm
    Jac[rows, blk["v_hat"]] = Xp[:, None] * Sm
    Jac[rows, blk["X_hat"]] = v[:, None] * dSm
    Jac[rows, blk["Y_hat"]] = (u + params.omega0 * offset[1:])[:, None] * dCm \
        + (params.omega0 * Yp)[:, None] * Cm

    # speed rows
    rows = slice(3 * m, 3 * m + N)
    Jac[rows, blk["X_hat"]] = 2.0 * mid.Xp[:, None] * dt.dsin[:, 1:]
    Jac[rows, blk["Y_hat"]] = 2.0 * mid.Yp[:, None] * dt.dcos
    Jac[rows, n - 1] = -2.0 * sol.L / math.pi**2

    # depth and closure
    Jac[n - 2, blk["X_hat"]] = (w * mesh.Y) @ mt.dsin[:, 1:]
    Jac[n - 2, blk["Y_hat"]] = (w * mesh.Xp) @ mt.cos
    if system.closure.kind == "amplitude":
        Jac[n - 1, blk["Y_hat"]] = 2.0 * (np.arange(N) % 2)
    else:
        Jac[n - 1] = 2.0 * (sol.flatten() - system.closure.anchor)
    return Jac


def _sine_columns(table) -> NDArray[np.float64]:
    # sine columns for modes 1..N-1
    return table.sin[:, 1:]


def fd_jacobian(sol: SolutionVector, params: PhysParams, grid: CollocationGrid | None,
                closure: ClosureSpec, opts: NewtonOptions | None = None,
                gauge: Gauge = "shifted") -> NDArray[np.float64]:
    system = ResidualSystem(params, sol.N, closure, gauge, grid)
    return fd_jacobian_system(system, sol, opts or NewtonOptions())


def _factor(J: NDArray[np.float64], opts: NewtonOptions):
    if not np.all(np.isfinite(J)):
        raise SingularJacobian("Jacobian has non-finite entries")
    lu, piv = scipy.linalg.lu_factor(J, check_finite=False)
    if np.any(np.diag(lu) == 0.0):
        raise SingularJacobian("exactly singular Jacobian")
    anorm = np.max(np.sum(np.abs(J), axis=0))
    rcond, info = scipy.linalg.lapack.dgecon(lu, anorm, norm="1")
    if rcond == 0.0 or 1.0 / rcond > opts.max_condition:
        raise SingularJacobian(f"Jacobian condition estimate {1.0 / max(rcond, 1e-300):.3e} too large")
    return lu, piv


def newton_solve(initial: SolutionVector, params: PhysParams, closure: ClosureSpec,
                 opts: NewtonOptions | None = None, gauge: Gauge = "shifted",
                 grid: CollocationGrid | None = None) -> NewtonResult:
    opts = opts or NewtonOptions()
    N = initial.N
    system = ResidualSystem(params, N, closure, gauge, grid)

    def admissible(sol):
        if not opts.check_admissibility:
            return True, "ok"
        rep = admissibility(sol, params)
        return rep.ok, rep.reason

    ok, reason = admissible(initial)
    if not ok:
        raise Inadmissible(reason)
    sol = initial
    phi = sol.flatten()
    r = system.residual(sol)
    norm = float(np.max(np.abs(r)))
    history = [norm]
    builds = 0
    if norm <= opts.tol_residual:
        return NewtonResult(sol, 0, norm, 0, tuple(history))

    factor = None
    frozen = False
    slow = 0
    last_reason = ""
    for it in range(1, opts.max_iterations + 1):
        if factor is None or not frozen:
            if opts.jacobian == "analytic":
                Jac = analytic_jacobian(system, sol)
            else:
                Jac = fd_jacobian_system(system, sol, opts, base=r)
            factor = _factor(Jac, opts)
            builds += 1
            fresh = True
        else:
            fresh = False
        step = scipy.linalg.lu_solve(factor, r, check_finite=False)
        lam = 1.0
        accepted = None
        for _ in range(opts.max_backtracks + 1):
            trial_phi = phi - lam * step
            try:
                trial = SolutionVector.unflatten(trial_phi, N)
                r_t = system.residual(trial)
            except (PoleProximity, ValueError) as exc:
                last_reason = str(exc)
                lam *= opts.damping
                continue
            n_t = float(np.max(np.abs(r_t)))
            if np.isfinite(n_t) and n_t < norm:
                ok, reason = admissible(trial)
                if ok:
                    accepted = (trial, trial_phi, r_t, n_t)
                    break
                last_reason = reason
            lam *= opts.damping
        if accepted is None:
            if not fresh:
                frozen = False  # retry with a fresh Jacobian
                factor = None
                history.append(norm)
                continue
            if last_reason and last_reason != "ok" and not last_reason.startswith("Cauchy"):
                raise Inadmissible(last_reason)
            raise NonConvergence(it, min(history))
        sol, phi, r, new_norm = accepted
        ratio = new_norm / norm
        norm = new_norm
        history.append(norm)
        log.debug("newton it=%d norm=%.3e lambda=%.3g fresh=%s", it, norm, lam, fresh)
        if norm <= opts.tol_residual:
            return NewtonResult(sol, it, norm, builds, tuple(history))
        if norm < opts.jacobian_reuse_threshold:
            if frozen and ratio > 0.9:
                slow += 1
                if slow >= 2:
                    frozen = False  # one rebuild, then freeze again
                    slow = 0
                    continue
            frozen = True
        else:
            frozen = False
    raise NonConvergence(opts.max_iterations, min(history))
