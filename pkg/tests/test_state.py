import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from twolayer import PhysParams, SolutionVector, amplitude, decay_metric, evaluate, resample, shear_solution
from twolayer.residual import ClosureSpec, assemble_residual
from twolayer.state import CollocationGrid, evaluate_many, reflect


def random_solution(rng, N, scale=1.0, L=1.0):
    return SolutionVector(N, rng.uniform(-scale, scale, N), rng.uniform(-scale, scale, N - 1),
                          rng.uniform(-scale, scale, N - 1), rng.uniform(-scale, scale, N), L)


@st.composite
def solutions(draw, N=st.integers(2, 24)):
    n = draw(N)
    c = st.floats(-1, 1)
    return SolutionVector(
        n,
        draw(arrays(np.float64, n, elements=c)),
        draw(arrays(np.float64, n - 1, elements=c)),
        draw(arrays(np.float64, n - 1, elements=c)),
        draw(arrays(np.float64, n, elements=c)),
        draw(st.floats(0.01, 10)),
    )


@given(solutions())
def test_flatten_roundtrip(sol):
    phi = sol.flatten()
    assert phi.shape == (4 * sol.N - 1,)
    assert SolutionVector.unflatten(phi, sol.N) == sol


def test_invalid_construction():
    with pytest.raises(ValueError):
        SolutionVector(4, np.zeros(4), np.zeros(3), np.zeros(3), np.zeros(4), 0.0)
    with pytest.raises(ValueError):
        SolutionVector(4, np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(4), 1.0)
    with pytest.raises(ValueError):
        SolutionVector.unflatten(np.zeros(10), 4)


def test_collocation_grid():
    g = CollocationGrid(8)
    assert g.mesh[0] == 0 and g.mesh[-1] == pytest.approx(math.pi)
    assert g.mesh.size == 9 and g.midpoints.size == 8
    assert np.all(g.mesh[:-1] < g.midpoints) and np.all(g.midpoints < g.mesh[1:])
    assert g.midpoints[-1] == pytest.approx(15 * math.pi / 16)
    assert g.weights.sum() == pytest.approx(math.pi)


@settings(max_examples=30)
@given(solutions(), st.floats(-10, 10), st.floats(0.2, 5))
def test_parity_and_periodicity(sol, t, k):
    a, b = evaluate(sol, t, k), evaluate(sol, -t, k)
    assert b.X == pytest.approx(-a.X, abs=1e-9)
    assert b.Y == pytest.approx(a.Y, abs=1e-9)
    assert b.u == pytest.approx(a.u, abs=1e-9)
    assert b.v == pytest.approx(-a.v, abs=1e-9)
    c = evaluate(sol, t + 2 * math.pi, k)
    assert c.X - a.X == pytest.approx(2 * math.pi / k, abs=1e-8)
    assert c.Y == pytest.approx(a.Y, abs=1e-8)


def test_evaluate_at_zero_and_shear():
    rng = np.random.default_rng(1)
    sol = random_solution(rng, 12)
    s0 = evaluate(sol, 0.0, 2.0)
    assert s0.X == 0.0 and s0.v == 0.0
    assert s0.Y == pytest.approx(sol.Y_hat.sum(), abs=1e-14)
    sh = shear_solution(PhysParams(2, 0.4, 0.1), 0.3, 16)
    tr = evaluate_many(sh, np.linspace(0, 7, 13), 2.0)
    assert np.allclose(tr.Y, 0.4, atol=1e-15) and np.allclose(tr.Xp, 0.5, atol=1e-15)


def test_derivatives_match_central_differences():
    rng = np.random.default_rng(7)
    for _ in range(5):
        sol = random_solution(rng, 10)
        t = rng.uniform(0, 2 * math.pi, 20)
        h = 1e-6
        tr, tp, tm = (evaluate_many(sol, t + d, 1.3) for d in (0.0, h, -h))
        assert np.max(np.abs((tp.X - tm.X) / (2 * h) - tr.Xp)) <= 1e-8
        assert np.max(np.abs((tp.Y - tm.Y) / (2 * h) - tr.Yp)) <= 1e-8


def test_amplitude():
    p = PhysParams(1, 0.5, 0)
    sh = shear_solution(p, 0.2, 8)
    assert amplitude(sh) == 0
    Y = sh.Y_hat.copy()
    Y[1] = 0.05
    assert amplitude(sh.replace(Y_hat=Y)) == pytest.approx(0.1)
    Y[2] = 0.3
    Y[4] = -0.1
    assert amplitude(sh.replace(Y_hat=Y)) == pytest.approx(0.1)
    sol = sh.replace(Y_hat=Y)
    assert amplitude(sol) == pytest.approx(evaluate(sol, 0, 1).Y - evaluate(sol, math.pi, 1).Y)


def test_resample():
    rng = np.random.default_rng(3)
    sol = random_solution(rng, 16)
    assert resample(sol, 16) is sol
    assert resample(resample(sol, 32), 16) == sol
    t = CollocationGrid(16).mesh
    a, b = evaluate_many(sol, t, 1.0), evaluate_many(resample(sol, 32), t, 1.0)
    assert np.max(np.abs(a.Y - b.Y)) <= 1e-15 and np.max(np.abs(a.u - b.u)) <= 1e-15
    with pytest.raises(ValueError):
        resample(sol, 3)


def test_decay_metric():
    p = PhysParams(1, 0.5, 0)
    assert decay_metric(shear_solution(p, 0.2, 16)) == 0.0
    N, r = 32, 0.5
    sh = shear_solution(p, 1.0, N)
    sol = sh.replace(u_hat=r ** np.arange(N))
    assert r**24 / 2 <= decay_metric(sol) <= 2 * r**24
    with pytest.raises(ValueError):
        decay_metric(shear_solution(p, 0.2, 4))


def test_reflect():
    p = PhysParams(2, 0.3, 0.2)
    rng = np.random.default_rng(5)
    sol = random_solution(rng, 8, 0.01, 1.0)
    sol = sol.replace(Y_hat=np.r_[0.3, sol.Y_hat[1:]])
    r_sol, r_p = reflect(sol, p)
    assert r_p == PhysParams(2, 0.7, 0.8)
    back, bp = reflect(r_sol, r_p)
    assert (bp.k, bp.H, bp.omega0) == pytest.approx((p.k, p.H, p.omega0), abs=1e-15)
    assert np.allclose(back.flatten(), sol.flatten(), atol=1e-15)
    assert amplitude(r_sol) == pytest.approx(-amplitude(sol), abs=1e-15)
    sh = shear_solution(p, 0.25, 32)
    r_sh, r_p = reflect(sh, p)
    rep = assemble_residual(r_sh, r_p, CollocationGrid(32), ClosureSpec.amplitude_target(0.0))
    assert rep.max_abs <= 1e-12
