"""Reconstruction of the flow inside both layers from a converged interface.

Each layer's velocity is recovered from a holomorphic function f_j by the
interior form of the Cauchy identities, which picks up the full residue and
so carries half the on-interface coefficient:

    f0(w) = -(k / 2 pi) int_0^pi [F g(Z, w) Z' + conj F g(-conj Z, w) conj Z'] dt
    f1(w) = -(k / 2 pi) int_0^pi [F1 g(i - Z, w - i) Z' + conj F1 g(i + conj Z, w - i) conj Z'] dt

with F1 = F + Y - H.  Physical velocity is U = Re f_j + omega_j (y - H),
V = -Im f_j.  The trapezium rule is spectrally accurate away from the
interface; its node count is raised as the target point nears the curve.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import brentq, minimize_scalar
from scipy.spatial import cKDTree

from .errors import OnInterface, OutOfDomain
from .params import PhysParams
from .residual import _g_exp
from .state import SolutionVector, TrigTable, evaluate_many

FloatArray = NDArray[np.float64]

ON_INTERFACE_TOL = 1e-6
MAX_NODES = 1 << 16
CHUNK = 1 << 21  # kernel entries evaluated per block

LOWER, UPPER = 0, 1


class Reconstruction:
    """Cached geometry and quadrature tables for one solution."""

    def __init__(self, sol: SolutionVector, params: PhysParams) -> None:
        self.sol = sol
        self.params = params
        self.period = 2.0 * math.pi / params.k
        # dense polyline over one full period, t in [-pi, pi]
        M = max(64 * sol.N, 4096)
        t = np.linspace(-math.pi, math.pi, M + 1)
        tr = evaluate_many(sol, t, params.k)
        self.poly_t = t
        self.poly_x = tr.X
        self.poly_y = tr.Y
        self.spacing = float(np.max(np.hypot(np.diff(tr.X), np.diff(tr.Y))))
        self._tables: dict[int, tuple] = {}
        self.tree_shift = (-self.period, 0.0, self.period)
        pts = np.vstack([np.column_stack([tr.X + s, tr.Y]) for s in self.tree_shift])
        self.tree = cKDTree(pts)

    # -- geometry ------------------------------------------------------------

    def wrap_x(self, x: FloatArray) -> FloatArray:
        """Reduce abscissae into [-pi/k, pi/k)."""
        half = 0.5 * self.period
        return (np.asarray(x, dtype=np.float64) + half) % self.period - half

    def crossings(self, x: float) -> FloatArray:
        """Heights at which the vertical line through x meets the interface, sorted."""
        x0 = float(self.wrap_x(x))
        px, k, sol = self.poly_x, self.params.k, self.sol
        left = px[:-1] <= x0
        idx = np.nonzero(left != (px[1:] <= x0))[0]
        ys = []
        for i in idx:
            ta, tb = self.poly_t[i], self.poly_t[i + 1]

            def gx(t):
                return float(evaluate_many(sol, np.array([t]), k).X[0]) - x0

            fa, fb = gx(ta), gx(tb)
            if fa == 0.0:
                ts = ta
            elif fb == 0.0:
                ts = tb
            elif fa * fb < 0:
                ts = brentq(gx, ta, tb, xtol=1e-15, rtol=1e-15)
            else:  # polyline and curve disagree on a tangency; take the chord
                ts = ta + (tb - ta) * (x0 - px[i]) / (px[i + 1] - px[i])
            ys.append(float(evaluate_many(sol, np.array([ts]), k).Y[0]))
        return np.sort(np.array(ys))

    def classify(self, x: FloatArray, y: FloatArray) -> tuple[NDArray[np.int8], FloatArray]:
        """Layer index (by counting crossings below the point) and distance to the curve."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64)).ravel()
        y = np.atleast_1d(np.asarray(y, dtype=np.float64)).ravel()
        xw = self.wrap_x(x)
        layer = np.empty(x.shape, dtype=np.int8)
        ux, inv = np.unique(xw, return_inverse=True)
        for j, xv in enumerate(ux):
            sel = inv == j
            ys = self.crossings(xv)
            layer[sel] = (np.sum(ys[None, :] < y[sel, None], axis=1) % 2).astype(np.int8)
        dist, idx = self.tree.query(np.column_stack([xw, y]))
        # the chord distance is too coarse next to the curve; refine on the smooth curve
        for i in np.nonzero(dist < 4.0 * self.spacing)[0]:
            dist[i] = self._refine(xw[i], y[i], int(idx[i]) % self.poly_t.size,
                                   self.tree_shift[int(idx[i]) // self.poly_t.size])
        return layer, dist

    def _refine(self, x: float, y: float, i: int, shift: float) -> float:
        k, sol = self.params.k, self.sol
        lo = self.poly_t[max(i - 1, 0)]
        hi = self.poly_t[min(i + 1, len(self.poly_t) - 1)]

        def dist2(t):
            tr = evaluate_many(sol, np.array([t]), k)
            return (tr.X[0] + shift - x) ** 2 + (tr.Y[0] - y) ** 2

        res = minimize_scalar(dist2, bounds=(lo, hi), method="bounded", options={"xatol": 1e-14})
        return min(math.sqrt(max(float(res.fun), 0.0)), math.sqrt(dist2(self.poly_t[i])))

    # -- quadrature ----------------------------------------------------------

    def nodes_for(self, dist: FloatArray) -> NDArray[np.int64]:
        """Trapezium node count giving ~1e-14 accuracy at the given distances."""
        need = 16.0 * self.sol.L / (math.pi * np.maximum(dist, 1e-300))
        need = np.minimum(np.maximum(need, 2 * self.sol.N), MAX_NODES)
        return (2 ** np.ceil(np.log2(need))).astype(np.int64)

    def table(self, M: int):
        tab = self._tables.get(M)
        if tab is None:
            t = np.linspace(0.0, math.pi, M + 1)
            tr = TrigTable(t, self.sol.N).traces(self.sol, self.params.k)
            w = np.full(M + 1, math.pi / M)
            w[0] = w[-1] = 0.5 * math.pi / M
            wZp = w * tr.Zp
            F1 = tr.F + (tr.Y - self.params.H)
            a = np.exp(1j * self.params.k * tr.Z)
            tab = (a, tr.F * wZp, np.conj(tr.F * wZp), F1 * wZp, np.conj(F1 * wZp))
            self._tables[M] = tab
        return tab

    def holomorphic(self, w: NDArray[np.complex128], layer: NDArray[np.int8],
                    M: NDArray[np.int64]) -> NDArray[np.complex128]:
        """f_j(w) for each point, j = its layer."""
        k = self.params.k
        ek = math.exp(-k)
        out = np.empty(w.shape, dtype=np.complex128)
        for m in np.unique(M):
            a, q, qc, q1, q1c = self.table(int(m))
            ac = np.conj(a)
            sel = np.nonzero(M == m)[0]
            step = max(1, CHUNK // len(a))
            for s in range(0, sel.size, step):
                idx = sel[s:s + step]
                b = np.exp(1j * k * w[idx])[:, None]
                lo = layer[idx] == LOWER
                res = np.empty(idx.size, dtype=np.complex128)
                if np.any(lo):
                    bl = b[lo]
                    res[lo] = _g_exp(a[None, :], bl, False) @ q + _g_exp(ac[None, :], bl, False) @ qc
                if np.any(~lo):
                    bu = b[~lo] / ek
                    res[~lo] = (_g_exp(ek / a[None, :], bu, False) @ q1
                                + _g_exp(ek / ac[None, :], bu, False) @ q1c)
                out[idx] = -(k / (2.0 * math.pi)) * res
        return out

    def velocity(self, x: FloatArray, y: FloatArray, *, strict: bool = False):
        """Physical velocity, layer index and interface distance at arrays of points.

        Points within ``ON_INTERFACE_TOL`` of the curve get NaN velocities
        (or raise OnInterface when ``strict``).
        """
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        if np.any((y < 0.0) | (y > 1.0)) or not np.all(np.isfinite(x)):
            raise OutOfDomain("point outside the channel 0 <= y <= 1")
        shape = x.shape
        xf, yf = x.ravel(), y.ravel()
        layer, dist = self.classify(xf, yf)
        on = dist < ON_INTERFACE_TOL
        if strict and np.any(on):
            raise OnInterface(f"point within {ON_INTERFACE_TOL:g} of the interface")
        U = np.full(xf.shape, np.nan)
        V = np.full(xf.shape, np.nan)
        ok = np.nonzero(~on)[0]
        if ok.size:
            w = xf[ok] + 1j * yf[ok]
            f = self.holomorphic(w, layer[ok], self.nodes_for(dist[ok]))
            omega = np.where(layer[ok] == LOWER, self.params.omega0, self.params.omega1)
            U[ok] = f.real + omega * (yf[ok] - self.params.H)
            V[ok] = -f.imag
        return U.reshape(shape), V.reshape(shape), layer.reshape(shape), dist.reshape(shape)


@lru_cache(maxsize=8)
def reconstruction(sol: SolutionVector, params: PhysParams) -> Reconstruction:
    return Reconstruction(sol, params)


def velocity_at(sol: SolutionVector, params: PhysParams, point: tuple[float, float]) -> tuple[float, float]:
    """Physical velocity (U, V) at an interior point of either layer."""
    x, y = point
    U, V, _, _ = reconstruction(sol, params).velocity(np.array([x]), np.array([y]), strict=True)
    return float(U[0]), float(V[0])


# --- stream function on a grid --------------------------------------------

_GL_ORDER = 8
_GL = {n: np.polynomial.legendre.leggauss(n) for n in range(1, _GL_ORDER + 1)}
_GL_X, _GL_W = _GL[_GL_ORDER]

Tag = Literal["lower", "upper", "interface-band"]


def _ro(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FieldGrid:
    """Velocity and stream function sampled on a uniform grid over one period.

    Arrays are indexed [iy, ix].  ``layer`` holds 0 (lower) or 1 (upper);
    ``band`` marks nodes within 1.5 cells of the interface.
    """

    x: FloatArray
    y: FloatArray
    U: FloatArray
    V: FloatArray
    Psi: FloatArray
    layer: NDArray[np.int8]
    band: NDArray[np.bool_]
    distance: FloatArray
    solution: SolutionVector = field(repr=False)
    params: PhysParams = field(repr=False)

    def __post_init__(self) -> None:
        for name in ("x", "y", "U", "V", "Psi", "layer", "band", "distance"):
            _ro(getattr(self, name))

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    def tags(self) -> NDArray[np.str_]:
        out = np.where(self.layer == LOWER, "lower", "upper").astype("<U14")
        out[self.band] = "interface-band"
        return out

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        tags = self.tags()
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "y", "U", "V", "Psi", "layer"])
            for iy in range(self.y.size):
                for ix in range(self.x.size):
                    wr.writerow([repr(float(self.x[ix])), repr(float(self.y[iy])),
                                 repr(float(self.U[iy, ix])), repr(float(self.V[iy, ix])),
                                 repr(float(self.Psi[iy, ix])), tags[iy, ix]])
        return path


def _panel_integrals(rec: Reconstruction, x: float, a: FloatArray, b: FloatArray) -> FloatArray:
    """Integral of U over each [a_i, b_i] on the vertical line through x.

    The Gauss-Legendre order shrinks with the panel length so that short
    panels ending on the interface do not put nodes needlessly close to it.
    """
    ref = max(float(np.max(b - a)), 1e-300)
    order = np.clip(np.ceil(_GL_ORDER * (b - a) / ref), 1, _GL_ORDER).astype(int)
    out = np.zeros(a.size)
    for n in np.unique(order):
        sel = order == n
        gx, gw = _GL[n]
        half = 0.5 * (b[sel] - a[sel])
        ys = (0.5 * (a[sel] + b[sel]))[:, None] + half[:, None] * gx[None, :]
        U, _, _, _ = rec.velocity(np.full(ys.shape, x), ys)
        out[sel] = half * (np.nan_to_num(U) @ gw)
    return out


def _column_psi(rec: Reconstruction, x: float, y_nodes: FloatArray, bottom: float) -> FloatArray:
    """Psi on one vertical line, integrated upward from the bottom-wall value."""
    cross = rec.crossings(x)
    breaks = np.unique(np.concatenate([[0.0, 1.0], y_nodes, cross]))
    seg = _panel_integrals(rec, x, breaks[:-1], breaks[1:])
    cum = bottom + np.concatenate([[0.0], np.cumsum(seg)])
    at = dict(zip(breaks.tolist(), cum.tolist()))
    return np.array([at[float(v)] for v in y_nodes])


def psi_on_interface(sol: SolutionVector, params: PhysParams, t: FloatArray) -> FloatArray:
    """Psi at interface points Z(t), with the same anchoring as :func:`stream_function_grid`.

    Zero up to reconstruction error; the size of the result is the
    level-set check.
    """
    rec = reconstruction(sol, params)
    bottom = -station_integrals(sol, params, 0.0)[0]
    tr = evaluate_many(sol, np.atleast_1d(np.asarray(t, dtype=np.float64)), params.k)
    return np.array([_column_psi(rec, x, np.array([y]), bottom)[0] for x, y in zip(tr.X, tr.Y)])


def stream_function_grid(sol: SolutionVector, params: PhysParams, nx: int = 64, ny: int = 64) -> FieldGrid:
    """Sample U, V and Psi on x in [0, 2 pi/k) (endpoint excluded) and y in [0, 1].

    Psi is integrated upward from the bottom wall with Gauss-Legendre
    panels split at the interface crossings.  The bottom wall carries
    Psi = -(lower mass flux at x = 0), which puts the interface on the zero
    level set; how well it stays there at other x measures the accuracy of
    the reconstruction.
    """
    if nx < 32 or ny < 32:
        raise ValueError("grid resolution must be at least 32 x 32")
    rec = reconstruction(sol, params)
    x = np.linspace(0.0, rec.period, nx, endpoint=False)
    y = np.linspace(0.0, 1.0, ny)
    XX, YY = np.meshgrid(x, y)
    U, V, layer, dist = rec.velocity(XX, YY)
    bottom = -station_integrals(sol, params, 0.0)[0]
    Psi = np.column_stack([_column_psi(rec, xi, y, bottom) for xi in x])
    cell = max(x[1] - x[0], y[1] - y[0])
    band = dist < 1.5 * cell
    return FieldGrid(x, y, U, V, Psi, layer, band, dist, sol, params)


# --- stagnation points ----------------------------------------------------

StagKind = Literal["saddle", "centre", "degenerate"]
DEGENERATE_DET = 1e-10


@dataclass(frozen=True)
class StagnationPoint:
    position: tuple[float, float]
    kind: StagKind
    velocity_gradient: tuple[tuple[float, float], tuple[float, float]]
    layer: int

    @property
    def layer_name(self) -> str:
        return "lower" if self.layer == LOWER else "upper"


def _gradient(rec: Reconstruction, x: float, y: float, h: float = 1e-5) -> NDArray[np.float64]:
    xs = np.array([x + h, x - h, x, x])
    ys = np.array([y, y, min(y + h, 1.0), max(y - h, 0.0)])
    U, V, _, _ = rec.velocity(xs, ys)
    dy = ys[2] - ys[3]
    return np.array([[(U[0] - U[1]) / (2 * h), (U[2] - U[3]) / dy],
                     [(V[0] - V[1]) / (2 * h), (V[2] - V[3]) / dy]])


def _refine_zero(rec: Reconstruction, x: float, y: float, reach: float, tol: float = 1e-8):
    x0, y0 = x, y
    for _ in range(30):
        U, V, _, _ = rec.velocity(np.array([x]), np.array([y]))
        r = np.array([U[0], V[0]])
        if not np.all(np.isfinite(r)):
            return None
        G = _gradient(rec, x, y)
        if np.hypot(*r) <= tol:
            return x, y, G
        if abs(np.linalg.det(G)) < DEGENERATE_DET:
            return x, y, G
        dx, dy = np.linalg.solve(G, -r)
        x, y = x + dx, min(max(y + dy, 0.0), 1.0)
        if math.hypot(x - x0, y - y0) > reach:
            return None
    return None


def stagnation_points(field: FieldGrid, tol: float = 1e-8) -> list[StagnationPoint]:
    """Zeros of the velocity away from the interface band.

    Candidate cells are those whose corner values of U and V both straddle
    zero; each is refined by Newton's method on the reconstructed velocity
    and classified by the determinant of the (traceless) velocity gradient.
    Candidates with a near-singular gradient are returned as degenerate.
    """
    rec = reconstruction(field.solution, field.params)
    U, V = field.U, field.V
    bad = field.band | ~np.isfinite(U) | ~np.isfinite(V)
    Uw = np.concatenate([U, U[:, :1]], axis=1)
    Vw = np.concatenate([V, V[:, :1]], axis=1)
    badw = np.concatenate([bad, bad[:, :1]], axis=1)

    def corners(A):
        return np.stack([A[:-1, :-1], A[:-1, 1:], A[1:, :-1], A[1:, 1:]])

    cU, cV, cB = corners(Uw), corners(Vw), corners(badw)
    scale = max(float(np.nanmax(np.abs(U))), 1.0)
    eps = 1e-12 * scale
    cand = ((cU.min(0) <= eps) & (cU.max(0) >= -eps) & (cV.min(0) <= eps) & (cV.max(0) >= -eps)
            & ~cB.any(0))
    dx, dy = field.dx, field.dy
    found: list[StagnationPoint] = []
    for iy, ix in zip(*np.nonzero(cand)):
        xc = field.x[ix] + 0.5 * dx
        yc = field.y[iy] + 0.5 * dy
        hit = _refine_zero(rec, xc, yc, reach=2.0 * math.hypot(dx, dy), tol=tol)
        if hit is None:
            continue
        x, y, G = hit
        x = float(x % rec.period)
        if rec.period - x < 1e-6 * rec.period:
            x = 0.0
        if any(math.hypot(min(abs(x - p.position[0]), rec.period - abs(x - p.position[0])),
                          y - p.position[1]) < math.hypot(dx, dy) for p in found):
            continue
        det = float(np.linalg.det(G))
        kind: StagKind = "degenerate" if abs(det) < DEGENERATE_DET else ("saddle" if det < 0 else "centre")
        lay, _ = rec.classify(np.array([x]), np.array([y]))
        found.append(StagnationPoint((x, float(y)), kind, (tuple(G[0]), tuple(G[1])), int(lay[0])))
    found.sort(key=lambda p: (p.layer, p.position[0], p.position[1]))
    return found


# --- invariants -----------------------------------------------------------

@dataclass(frozen=True)
class InvariantReport:
    x_stations: FloatArray
    m_lower: FloatArray
    m_upper: FloatArray
    flow_force: FloatArray
    spread_lower: float
    spread_upper: float
    spread_force: float


def _spread(a: FloatArray) -> float:
    return float((a.max() - a.min()) / max(np.max(np.abs(a)), 1e-300))


def station_integrals(sol: SolutionVector, params: PhysParams, x: float, panels: int = 16):
    """Lower flux, upper flux and flow force on the vertical line through x."""
    rec = reconstruction(sol, params)
    cross = rec.crossings(x)
    if cross.size == 0:
        raise ValueError("vertical line misses the interface")
    pieces = np.concatenate([[0.0], cross, [1.0]])
    m_lower = m_upper = force = 0.0
    for j in range(len(pieces) - 1):
        a, b = pieces[j], pieces[j + 1]
        edges = np.linspace(a, b, panels + 1)
        lo, hi = edges[:-1], edges[1:]
        half = 0.5 * (hi - lo)
        ys = (0.5 * (lo + hi))[:, None] + half[:, None] * _GL_X[None, :]
        U, V, layer, _ = rec.velocity(np.full(ys.shape, x), ys)
        omega = np.where(layer == LOWER, params.omega0, params.omega1)
        wq = half[:, None] * _GL_W[None, :]
        force += float(np.sum(wq * (0.5 * (V**2 - U**2) + omega * ys * U)))
        if j == 0:
            m_lower = float(np.sum(wq * U))
        if j == len(pieces) - 2:
            m_upper = float(np.sum(wq * U))
    return m_lower, m_upper, force


def invariants(sol: SolutionVector, params: PhysParams, stations: Sequence[float]) -> InvariantReport:
    """Layer mass fluxes and flow force at several abscissae, with relative spreads."""
    xs = np.asarray(stations, dtype=np.float64)
    if xs.size < 3:
        raise ValueError("need at least three stations")
    vals = np.array([station_integrals(sol, params, float(x)) for x in xs])
    return InvariantReport(xs, vals[:, 0], vals[:, 1], vals[:, 2],
                           _spread(vals[:, 0]), _spread(vals[:, 1]), _spread(vals[:, 2]))


# --- PDE residual ---------------------------------------------------------

def pde_residual(field: FieldGrid, params: PhysParams | None = None,
                 exclude_distance: float | None = None) -> tuple[float, float]:
    """Maxima of |U_x + V_y| and |U_y - V_x - omega_j| by central differences.

    Nodes in the interface band (or within ``exclude_distance`` of the
    interface, when given, so that refined grids can share one physical
    exclusion zone) are skipped together with any node whose stencil
    reaches one.  Wall rows are skipped.
    """
    params = params or field.params
    U, V = field.U, field.V
    skip = field.band | ~np.isfinite(U) | ~np.isfinite(V)
    if exclude_distance is not None:
        skip = skip | (field.distance < exclude_distance)
    dx, dy = field.dx, field.dy
    Ux = (np.roll(U, -1, 1) - np.roll(U, 1, 1)) / (2 * dx)
    Vx = (np.roll(V, -1, 1) - np.roll(V, 1, 1)) / (2 * dx)
    Uy = np.full_like(U, np.nan)
    Vy = np.full_like(V, np.nan)
    Uy[1:-1] = (U[2:] - U[:-2]) / (2 * dy)
    Vy[1:-1] = (V[2:] - V[:-2]) / (2 * dy)
    stencil = skip | np.roll(skip, 1, 1) | np.roll(skip, -1, 1)
    stencil[1:-1] |= skip[2:] | skip[:-2]
    stencil[0] = stencil[-1] = True
    omega = np.where(field.layer == LOWER, params.omega0, params.omega1)
    keep = ~stencil
    if not np.any(keep):
        return 0.0, 0.0
    div = np.abs(Ux + Vy)[keep]
    vort = np.abs(Uy - Vx - omega)[keep]
    return float(div.max()), float(vort.max())


# --- streamlines ----------------------------------------------------------

def streamlines(field: FieldGrid, levels: Iterable[float]) -> list[tuple[float, FloatArray]]:
    """Marching-squares contours of Psi as (level, polyline) pairs in (x, y) coordinates."""
    from skimage.measure import find_contours

    P = np.concatenate([field.Psi, field.Psi[:, :1]], axis=1)  # close the period
    xs = np.append(field.x, field.x[0] + 2.0 * math.pi / field.params.k)
    out = []
    for lev in levels:
        for c in find_contours(P, float(lev)):
            iy, ix = c[:, 0], c[:, 1]
            px = np.interp(ix, np.arange(xs.size), xs)
            py = np.interp(iy, np.arange(field.y.size), field.y)
            out.append((float(lev), np.column_stack([px, py])))
    return out


def interface_polyline(sol: SolutionVector, params: PhysParams, samples: int = 512) -> FloatArray:
    """Interface points over one period, x from 0 to 2 pi/k."""
    t = np.linspace(0.0, 2.0 * math.pi, samples + 1)
    tr = evaluate_many(sol, t, params.k)
    return np.column_stack([tr.X, tr.Y])
