"""Branch following from the bifurcation point towards the limiting solution.

A branch starts from a small-amplitude Newton solve seeded by linear
theory and is extended by amplitude stepping with a secant predictor.  When
amplitude steps keep failing the corrector switches to the distance closure
anchored at the last point.  The resolution is doubled whenever the Fourier
tail of a new point stops decaying.  Branches can be persisted point by point
and resumed exactly.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Literal, Sequence

import numpy as np

from .errors import (Inadmissible, InsufficientEvidence, NonConvergence, PoleProximity,
                     SingularJacobian, TwoLayerError)
from .io import BranchFile, params_from_dict, solution_from_dict, solution_to_dict
from .model import linear_guess
from .params import PhysParams
from .residual import ClosureSpec, ResidualSystem, admissibility
from .solver import NewtonOptions, NewtonResult, newton_solve
from .state import SolutionVector, amplitude, decay_metric, evaluate_many, resample

log = logging.getLogger(__name__)

Verdict = Literal["TypeI_crest", "TypeI_trough", "TypeII_upper", "TypeII_lower",
                  "Undetermined", "ResolutionLimit"]

_STEP_FAILURES = (NonConvergence, SingularJacobian, PoleProximity, Inadmissible, ValueError)


@dataclass(frozen=True)
class ContinuationPolicy:
    initial_step: float = 0.02
    min_step: float = 5e-4
    max_step: float = 0.1
    max_points: int = 200
    decay_trigger: float = 1e-9
    max_N: int = 1024
    easy_iterations: int = 4
    easy_streak: int = 3
    switch_after: int = 2
    max_admissibility_failures: int = 3
    target_amplitude: float | None = None
    newton: NewtonOptions = NewtonOptions(max_iterations=15)

    def __post_init__(self) -> None:
        if not 0 < self.min_step <= self.initial_step <= self.max_step:
            raise ValueError("need 0 < min_step <= initial_step <= max_step")
        if self.max_points < 1 or self.max_N < 8:
            raise ValueError("max_points must be >= 1 and max_N >= 8")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ContinuationPolicy":
        d = dict(d)
        if isinstance(d.get("newton"), dict):
            d["newton"] = NewtonOptions(**d["newton"])
        return cls(**d)


@dataclass(frozen=True)
class StepState:
    """Predictor/corrector state carried from one accepted point to the next."""

    mode: Literal["amplitude", "distance"] = "amplitude"
    step: float = 0.02
    distance_step: float = 0.0
    streak: int = 0
    amplitude_failures: int = 0
    admissibility_failures: int = 0


@dataclass(frozen=True)
class PointDiagnostics:
    amplitude: float
    L: float
    N: int
    min_interface_speed: float
    min_speed_x: float  # abscissa in [0, pi/k] where the interface speed is smallest
    lower_clearance: float
    upper_clearance: float
    decay_metric: float
    iterations: int
    final_residual: float
    jacobian_builds: int
    closure: str
    step: float
    stagnation_distance: float | None = None
    stagnation_x: float | None = None


@dataclass(frozen=True)
class BranchPoint:
    solution: SolutionVector
    diagnostics: PointDiagnostics
    state: StepState

    def to_record(self) -> dict[str, Any]:
        return {"kind": "point", "solution": solution_to_dict(self.solution),
                "diagnostics": asdict(self.diagnostics), "state": asdict(self.state)}

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "BranchPoint":
        return cls(solution_from_dict(rec["solution"]), PointDiagnostics(**rec["diagnostics"]),
                   StepState(**rec["state"]))


@dataclass
class Branch:
    params: PhysParams
    policy: ContinuationPolicy
    points: list[BranchPoint] = field(default_factory=list)
    step_log: list[dict[str, Any]] = field(default_factory=list)
    stop_reason: str | None = None
    path: Path | None = None

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([p.diagnostics.amplitude for p in self.points])

    @property
    def last(self) -> SolutionVector:
        return self.points[-1].solution

    def _store(self, rec: dict[str, Any]) -> None:
        if self.path is not None:
            BranchFile(self.path).append(rec)

    def add_point(self, point: BranchPoint) -> None:
        self.points.append(point)
        self._store(point.to_record())

    def log_step(self, **entry: Any) -> None:
        entry = {"kind": "step", **entry}
        self.step_log.append(entry)
        self._store(entry)

    def stop(self, reason: str) -> None:
        self.stop_reason = reason
        self._store({"kind": "stop", "reason": reason})


# --- diagnostics ----------------------------------------------------------

def point_diagnostics(sol: SolutionVector, params: PhysParams, result: NewtonResult | None = None,
                      closure: str = "amplitude", step: float = 0.0) -> PointDiagnostics:
    adm = admissibility(sol, params)
    t = np.linspace(0.0, math.pi, max(16 * sol.N, 512) + 1)
    tr = evaluate_many(sol, t, params.k)
    speed = np.hypot(tr.u + params.omega0 * (tr.Y - params.H), tr.v)
    i = int(np.argmin(speed))
    return PointDiagnostics(
        amplitude=amplitude(sol), L=float(sol.L), N=sol.N,
        min_interface_speed=float(speed[i]), min_speed_x=float(tr.X[i]),
        lower_clearance=adm.lower_clearance, upper_clearance=adm.upper_clearance,
        decay_metric=decay_metric(sol),
        iterations=result.iterations if result else 0,
        final_residual=result.final_residual if result else float("nan"),
        jacobian_builds=result.jacobian_builds if result else 0,
        closure=closure, step=float(step),
    )


def axis_stagnation(sol: SolutionVector, params: PhysParams, samples: int = 48,
                    margin: float = 1e-3) -> tuple[float, float]:
    """Nearest stagnation point on the symmetry lines x = 0 and x = pi/k.

    V vanishes on both lines by symmetry, so stagnation points there are
    sign changes of U.  Returns (vertical distance to the interface, x);
    (inf, nan) if none is found.
    """
    from scipy.optimize import brentq

    from .fields import reconstruction

    rec = reconstruction(sol, params)
    best = (math.inf, math.nan)
    for x in (0.0, math.pi / params.k):
        cross = rec.crossings(x)
        pieces = np.concatenate([[0.0], cross, [1.0]])
        for a, b in zip(pieces[:-1], pieces[1:]):
            lo, hi = a + margin, b - margin
            if hi <= lo:
                continue
            ys = np.linspace(lo, hi, samples)
            U, _, _, _ = rec.velocity(np.full(ys.size, x), ys)
            for j in np.nonzero(np.sign(U[:-1]) * np.sign(U[1:]) < 0)[0]:
                def u_of(y):
                    return float(rec.velocity(np.array([x]), np.array([y]))[0][0])
                y0 = brentq(u_of, ys[j], ys[j + 1], xtol=1e-12)
                d = float(np.min(np.abs(cross - y0))) if cross.size else math.inf
                if d < best[0]:
                    best = (d, x)
    return best


# --- branch construction --------------------------------------------------

def start_branch(params: PhysParams, A0: float = 0.01, N0: int = 64,
                 policy: ContinuationPolicy | None = None, path: str | Path | None = None) -> Branch:
    """Solve for the first small-amplitude point from the linear-theory guess."""
    if not 0 < abs(A0) <= 0.05:
        raise ValueError("starting amplitude must satisfy 0 < |A0| <= 0.05")
    policy = policy or ContinuationPolicy()
    closure = ClosureSpec.amplitude_target(A0)
    try:
        res = newton_solve(linear_guess(params, A0, N0), params, closure, policy.newton)
    except (NonConvergence, SingularJacobian) as exc:
        log.info("linear guess failed (%s); retrying with the crude guess", exc)
        res = newton_solve(linear_guess(params, A0, N0, crude=True), params, closure, policy.newton)
    branch = Branch(params, policy, path=Path(path) if path else None)
    if branch.path is not None:
        BranchFile(branch.path).write_header(params, policy.to_dict())
    state = StepState(step=policy.initial_step)
    branch.add_point(BranchPoint(res.solution, point_diagnostics(res.solution, params, res), state))
    return branch


def load_branch(path: str | Path, *, verify: bool = True) -> Branch:
    """Read a persisted branch, checking every stored point on the way in."""
    bf = BranchFile(path)
    header, records = bf.read()
    params = params_from_dict(header["params"])
    policy = ContinuationPolicy.from_dict(header["policy"])
    branch = Branch(params, policy, path=None)
    for rec in records:
        kind = rec.get("kind")
        if kind == "point":
            pt = BranchPoint.from_record(rec)
            if verify:
                _check_point(pt.solution, params, policy)
            branch.points.append(pt)
        elif kind == "step":
            branch.step_log.append(rec)
        elif kind == "stop":
            branch.stop_reason = rec["reason"]
    bf.repair()
    branch.path = Path(path)
    return branch


def _check_point(sol: SolutionVector, params: PhysParams, policy: ContinuationPolicy) -> None:
    closure = ClosureSpec.amplitude_target(amplitude(sol))
    norm = ResidualSystem(params, sol.N, closure).report(sol).max_abs
    if norm > policy.newton.tol_residual:
        raise ValueError(f"stored point has residual {norm:.3e} above tolerance")
    rep = admissibility(sol, params)
    if not rep.ok:
        raise Inadmissible(rep.reason)


def _refine_resolution(sol: SolutionVector, params: PhysParams, policy: ContinuationPolicy):
    """Double N (repeatedly) until the coefficient tail decays; returns (sol, result, capped)."""
    result = None
    while decay_metric(sol) > policy.decay_trigger:
        if 2 * sol.N > policy.max_N:
            return sol, result, True
        result = newton_solve(resample(sol, 2 * sol.N), params,
                              ClosureSpec.amplitude_target(amplitude(sol)), policy.newton)
        sol = result.solution
    return sol, result, False


def extend_branch(branch: Branch, policy: ContinuationPolicy | None = None,
                  max_new_points: int | None = None) -> Branch:
    """Add points until a stopping rule fires.

    Stopping rules: ``max_points`` reached, target amplitude reached, the
    resolution cap hit, the step underflowing at the cap, or repeated
    admissibility failures.  ``max_new_points`` pauses the run without a
    stop reason (used to resume in pieces).  Failures never propagate.
    """
    if not branch.points:
        raise ValueError("branch has no points; call start_branch first")
    policy = policy or branch.policy
    params = branch.params
    st = branch.points[-1].state
    added = 0
    branch.stop_reason = None
    while True:
        if len(branch.points) >= policy.max_points:
            branch.stop("max_points")
            return branch
        last = branch.last
        A_last = amplitude(last)
        if policy.target_amplitude is not None and abs(A_last - policy.target_amplitude) <= 1e-15:
            branch.stop("target_reached")
            return branch
        if max_new_points is not None and added >= max_new_points:
            return branch
        N = last.N
        prev = resample(branch.points[-2].solution, N) if len(branch.points) > 1 else None
        phi = last.flatten()

        if st.mode == "amplitude":
            direction = 1.0 if A_last >= 0 else -1.0
            A_next = A_last + direction * st.step
            if policy.target_amplitude is not None:
                T = policy.target_amplitude
                if (A_next - T) * direction > 0:
                    A_next = T
            guess = phi
            if prev is not None:
                dA = A_last - amplitude(prev)
                if dA != 0.0:
                    guess = phi + (A_next - A_last) / dA * (phi - prev.flatten())
            closure = ClosureSpec.amplitude_target(A_next)
            size = abs(A_next - A_last)
        else:
            tangent = phi - prev.flatten()
            guess = phi + st.distance_step * tangent / np.linalg.norm(tangent)
            closure = ClosureSpec.distance_from(phi, st.distance_step)
            size = st.distance_step

        try:
            res = newton_solve(SolutionVector.unflatten(guess, N), params, closure, policy.newton)
            sol, refined, capped = _refine_resolution(res.solution, params, policy)
        except _STEP_FAILURES as exc:
            branch.log_step(closure=st.mode, step=size, N=N, outcome="failed",
                            error=type(exc).__name__, message=str(exc))
            adm = st.admissibility_failures + isinstance(exc, Inadmissible)
            if adm >= policy.max_admissibility_failures:
                branch.stop("inadmissible")
                return branch
            st = replace(st, streak=0, admissibility_failures=adm)
            if st.mode == "amplitude":
                st = replace(st, step=0.5 * st.step, amplitude_failures=st.amplitude_failures + 1)
                if st.amplitude_failures >= policy.switch_after and prev is not None:
                    d = 0.5 * float(np.linalg.norm(phi - prev.flatten()))
                    st = replace(st, mode="distance", distance_step=d)
                current = st.step
            else:
                st = replace(st, distance_step=0.5 * st.distance_step)
                current = st.distance_step
            if current < policy.min_step:
                if 2 * N > policy.max_N:
                    branch.stop("resolution_limit")
                    return branch
                # the step may be failing because the resolution is too coarse
                try:
                    res = newton_solve(resample(last, 2 * N), params,
                                       ClosureSpec.amplitude_target(A_last), policy.newton)
                except _STEP_FAILURES as exc2:
                    branch.log_step(closure="amplitude", step=0.0, N=2 * N, outcome="failed",
                                    error=type(exc2).__name__, message=str(exc2))
                    branch.stop("step_underflow")
                    return branch
                st = StepState(step=4 * policy.min_step)
                branch.log_step(closure="amplitude", step=0.0, N=2 * N, outcome="refined")
                branch.add_point(BranchPoint(res.solution,
                                             point_diagnostics(res.solution, params, res), st))
                added += 1
            continue

        result = res
        if refined is not None:
            result = replace(refined, iterations=res.iterations + refined.iterations,
                             jacobian_builds=res.jacobian_builds + refined.jacobian_builds)
        easy = res.iterations <= policy.easy_iterations
        streak = st.streak + 1 if easy else 0
        step, dstep = st.step, st.distance_step
        if streak >= policy.easy_streak:
            streak = 0
            if st.mode == "amplitude":
                step = min(2.0 * step, policy.max_step)
            else:
                dstep = 2.0 * dstep
        st = replace(st, step=step, distance_step=dstep, streak=streak,
                     amplitude_failures=0, admissibility_failures=0)
        branch.log_step(closure=st.mode, step=size, N=sol.N, outcome="accepted",
                        iterations=res.iterations)
        diag = point_diagnostics(sol, params, result, closure=closure.kind, step=size)
        branch.add_point(BranchPoint(sol, diag, st))
        added += 1
        if capped:
            branch.stop("resolution_limit")
            return branch


# --- termination classification -----------------------------------------

def continue_to_amplitude(params: PhysParams, A: float, N: int = 64,
                          policy: ContinuationPolicy | None = None, *, A0: float = 0.01,
                          newton: NewtonOptions | None = None) -> SolutionVector:
    """Converged solution at amplitude A.

    Small amplitudes (|A| <= 0.05) are a single Newton solve from the linear
    guess; larger ones follow a branch from A0 with the target stop rule.
    Raises Inadmissible or NonConvergence when the branch ends early.
    """
    if abs(A) <= 0.05:
        return newton_solve(linear_guess(params, A, N), params,
                            ClosureSpec.amplitude_target(A), newton).solution
    policy = replace(policy or ContinuationPolicy(), target_amplitude=A)
    A0 = math.copysign(min(abs(A0), 0.05), A)
    branch = start_branch(params, A0, N, policy)
    extend_branch(branch, policy)
    if branch.stop_reason != "target_reached":
        last = amplitude(branch.last)
        if branch.stop_reason == "inadmissible":
            raise Inadmissible(f"branch stopped at A={last:.6g}: inadmissible")
        raise NonConvergence(0, math.nan, f"branch stopped at A={last:.6g} "
                             f"({branch.stop_reason}) before reaching A={A:g}")
    return branch.last


@dataclass(frozen=True)
class TerminationReport:
    verdict: Verdict
    evidence: dict[str, tuple[float, ...]]
    terminal_amplitude: float
    reason: str


def _trend(values: np.ndarray, amps: np.ndarray, window: int, shrink: float) -> bool:
    """Decreasing over the last ``window`` points and shrunk >= ``shrink`` x over the tail.

    The tail is the part of the branch beyond half the terminal amplitude.
    """
    v = values[-window:]
    if v.size < 3 or not np.all(np.isfinite(v)):
        return False
    slope = np.polyfit(np.arange(v.size, dtype=float), v, 1)[0]
    if slope >= 0:
        return False
    tail = values[np.abs(amps) >= 0.5 * abs(amps[-1])]
    final = max(values[-1], 1e-300)
    return bool(np.max(tail) / final >= shrink)


def classify_termination(branch: Branch, speed_floor: float = 0.05, wall_floor: float = 0.02,
                         window: int = 5, shrink: float = 3.0) -> TerminationReport:
    """Decide how the branch approaches its limit from trailing diagnostics.

    Type I: the minimum interface speed heads to zero (a stagnation point
    reaches the interface) while both walls stay clear.  Type II: the
    interface heads into a wall while the speed stays up.  When both happen,
    the diagnostic that is further below its floor wins if it is at least
    twice as deep; otherwise the verdict is Undetermined.
    """
    pts = branch.points
    if len(pts) < 3:
        raise InsufficientEvidence(f"need at least 3 diagnosed points, have {len(pts)}")
    params = branch.params
    n = min(window, len(pts))
    # stagnation diagnostics are expensive; attach them to the tail only
    for i in range(len(pts) - n, len(pts)):
        d = pts[i].diagnostics
        if d.stagnation_distance is None:
            dist, x = axis_stagnation(pts[i].solution, params)
            pts[i] = replace(pts[i], diagnostics=replace(d, stagnation_distance=dist, stagnation_x=x))
    diags = [p.diagnostics for p in pts]
    amps = np.array([d.amplitude for d in diags])
    speed = np.array([d.min_interface_speed for d in diags])
    lower = np.array([d.lower_clearance for d in diags])
    upper = np.array([d.upper_clearance for d in diags])
    tail = diags[-n:]
    evidence = {
        "amplitude": tuple(amps[-n:]),
        "min_interface_speed": tuple(speed[-n:]),
        "lower_clearance": tuple(lower[-n:]),
        "upper_clearance": tuple(upper[-n:]),
        "decay_metric": tuple(d.decay_metric for d in tail),
        "stagnation_distance": tuple(float(d.stagnation_distance) for d in tail),
    }
    A_end = float(amps[-1])

    speed_low = speed[-1] < speed_floor and _trend(speed, amps, window, shrink)
    up_low = upper[-1] < wall_floor and _trend(upper, amps, window, shrink)
    lo_low = lower[-1] < wall_floor and _trend(lower, amps, window, shrink)
    wall_depth = min(upper[-1] if up_low else math.inf, lower[-1] if lo_low else math.inf) / wall_floor
    speed_depth = speed[-1] / speed_floor if speed_low else math.inf

    def type_one() -> Verdict:
        last = tail[-1]
        crest_x = 0.0 if A_end >= 0 else math.pi / params.k
        if last.stagnation_distance is not None and math.isfinite(last.stagnation_distance):
            x = last.stagnation_x
        else:
            x = last.min_speed_x
        return "TypeI_crest" if abs(x - crest_x) < 0.25 * 2 * math.pi / params.k else "TypeI_trough"

    def type_two() -> Verdict:
        if up_low and (not lo_low or upper[-1] <= lower[-1]):
            return "TypeII_upper"
        return "TypeII_lower"

    if speed_low and not (up_low or lo_low):
        verdict, reason = type_one(), "interface speed collapses with both walls clear"
    elif (up_low or lo_low) and not speed_low:
        verdict, reason = type_two(), "interface approaches a wall with the flow moving"
    elif speed_low:
        if wall_depth <= 0.5 * speed_depth:
            verdict, reason = type_two(), "wall contact dominates a falling interface speed"
        elif speed_depth <= 0.5 * wall_depth:
            verdict, reason = type_one(), "stagnation dominates a shrinking wall gap"
        else:
            verdict, reason = "Undetermined", "speed and wall clearance collapse together"
    elif branch.stop_reason == "resolution_limit":
        verdict, reason = "ResolutionLimit", "resolution cap reached before any degeneration"
    else:
        verdict, reason = "Undetermined", "no diagnostic trends below its floor"
    return TerminationReport(verdict, evidence, A_end, reason)


# --- sweeps ---------------------------------------------------------------

@dataclass(frozen=True)
class SweepCell:
    H: float
    omega0: float
    verdict: Verdict
    max_amplitude: float
    points: int
    reason: str


def run_cell(k: float, H: float, omega0: float, policy: ContinuationPolicy,
             A0: float = 0.01, N0: int = 64, path: str | Path | None = None) -> SweepCell:
    """One sweep cell; every failure becomes an Undetermined verdict with a reason."""
    try:
        params = PhysParams(k, H, omega0)
        if path is not None and BranchFile(path).exists():
            branch = load_branch(path)
        else:
            branch = start_branch(params, A0, N0, policy, path)
        extend_branch(branch, policy)
        rep = classify_termination(branch)
        amps = np.abs(branch.amplitudes)
        return SweepCell(H, omega0, rep.verdict, float(amps.max()), len(branch.points),
                         f"{branch.stop_reason}: {rep.reason}")
    except (TwoLayerError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return SweepCell(H, omega0, "Undetermined", float("nan"), 0, f"{type(exc).__name__}: {exc}")


def sweep(k: float, H_grid: Sequence[float], omega0_grid: Sequence[float],
          policy: ContinuationPolicy | None = None, workers: int = 1,
          out_dir: str | Path | None = None) -> list[SweepCell]:
    """Classify the branch endpoint for every (H, omega0) pair."""
    if len(H_grid) == 0 or len(omega0_grid) == 0:
        raise ValueError("sweep grids must be nonempty")
    policy = policy or ContinuationPolicy()
    jobs = []
    for H in H_grid:
        for w in omega0_grid:
            path = None
            if out_dir is not None:
                path = Path(out_dir) / f"branch_k{k:g}_H{H:g}_w{w:g}.jsonl"
            jobs.append((k, float(H), float(w), policy, 0.01, 64, path))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


def _run_job(job) -> SweepCell:
    return run_cell(*job)
