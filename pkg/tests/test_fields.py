import csv
import math

import numpy as np
import pytest

from twolayer import PhysParams, shear_solution
from twolayer.errors import OnInterface, OutOfDomain
from twolayer.fields import (interface_polyline, invariants, pde_residual, psi_on_interface,
                             stagnation_points, station_integrals, stream_function_grid, streamlines,
                             velocity_at)
from twolayer.model import conjugate_height, conjugate_speed, shear_stream_function
from twolayer.state import evaluate

P = PhysParams(2.0, 0.5, 0.3)


@pytest.fixture(scope="module")
def shear():
    return shear_solution(P, 0.3, 32)


@pytest.fixture(scope="module")
def shear_field(shear):
    return stream_function_grid(shear, P, 32, 32)


@pytest.fixture(scope="module")
def wave_field(sol_a02):
    return stream_function_grid(sol_a02, P, 64, 64)


def test_shear_velocity_exact(shear):
    for x, y in [(0.1, 0.2), (1.3, 0.45), (2.0, 0.8), (3.0, 0.99)]:
        U, V = velocity_at(shear, P, (x, y))
        w = P.omega0 if y < P.H else P.omega1
        assert U == pytest.approx(w * (y - P.H) + 0.3, abs=1e-10)
        assert abs(V) <= 1e-10
    with pytest.raises(OnInterface):
        velocity_at(shear, P, (0.4, P.H + 1e-8))
    with pytest.raises(OutOfDomain):
        velocity_at(shear, P, (0.4, 1.2))


def test_boundary_limit(sol_a02):
    t0 = 0.7
    s = evaluate(sol_a02, t0, P.k)
    speed = math.hypot(s.Xp, s.Yp)
    nx, ny = -s.Yp / speed, s.Xp / speed  # upward normal
    # the physical velocity is continuous across the interface
    target = (s.u + P.omega0 * (s.Y - P.H), -s.v)
    for sign in (-1.0, 1.0):
        errs = []
        for d in (1e-2, 1e-3):
            U, V = velocity_at(sol_a02, P, (s.X + sign * d * nx, s.Y + sign * d * ny))
            errs.append(math.hypot(U - target[0], V - target[1]))
        assert 5 <= errs[0] / errs[1] <= 20


def test_wall_condition(sol_a02):
    for x in np.linspace(0, math.pi, 9):
        assert abs(velocity_at(sol_a02, P, (x, 0.0))[1]) <= 1e-8
        assert abs(velocity_at(sol_a02, P, (x, 1.0))[1]) <= 1e-8


def test_shear_stream_function(shear, shear_field):
    f = shear_field
    expect = shear_stream_function(f.y, P.H, 0.3, P.omega0)
    assert np.max(np.abs(f.Psi - expect[:, None])) <= 1e-8
    lo, up = pde_residual(f, P)
    assert lo <= 1e-12 and up <= 1e-12
    rep = invariants(shear, P, np.linspace(0, math.pi, 5))
    assert max(rep.spread_lower, rep.spread_upper, rep.spread_force) <= 1e-10
    stag = stagnation_points(f)
    assert all(s.kind == "degenerate" for s in stag)
    for level, line in streamlines(f, [-0.02, 0.05]):
        assert np.ptp(line[:, 1]) <= 1e-8


def test_level_set_and_walls(sol_a02, wave_field):
    assert np.max(np.abs(psi_on_interface(sol_a02, P, np.linspace(0, math.pi, 33)))) <= 1e-6
    top = wave_field.Psi[-1]
    assert np.ptp(top) <= 1e-6
    assert np.ptp(wave_field.Psi[0]) <= 1e-6
    assert np.all(np.abs(wave_field.V[[0, -1]]) <= 1e-8)


def test_zero_contour_follows_interface(sol_a02, wave_field):
    iface = interface_polyline(sol_a02, P, 256)
    diag = math.hypot(wave_field.dx, wave_field.dy)
    zero = np.vstack([line for _, line in streamlines(wave_field, [0.0])])
    gaps = [np.min(np.hypot(iface[:, 0] - x, iface[:, 1] - y)) for x, y in zero]
    assert max(gaps) <= diag


def test_closed_streamlines_round_centre(sol_a02, wave_field):
    stag = stagnation_points(wave_field)
    centre = next(s for s in stag if s.kind == "centre")
    psi_c = float(np.interp(centre.position[0], wave_field.x,
                            wave_field.Psi[np.argmin(np.abs(wave_field.y - centre.position[1]))]))
    saddle = next(s for s in stag if s.kind == "saddle" and s.layer == centre.layer)
    # a level between the centre and the separatrix gives a closed loop
    psi_s = float(np.interp(saddle.position[0], wave_field.x,
                            wave_field.Psi[np.argmin(np.abs(wave_field.y - saddle.position[1]))]))
    level = psi_c + 0.5 * (psi_s - psi_c)
    lines = [ln for _, ln in streamlines(wave_field, [level])]
    closed = [ln for ln in lines if np.hypot(*(ln[0] - ln[-1])) <= 1e-9 and len(ln) > 4]
    assert closed
    loop = closed[0]
    assert loop[:, 0].min() < centre.position[0] < loop[:, 0].max()


def test_stagnation_gradient_is_traceless(wave_field):
    for s in stagnation_points(wave_field):
        g = np.array(s.velocity_gradient)
        assert abs(np.trace(g)) <= 1e-5 * max(1.0, np.max(np.abs(g)))
        U, V = velocity_at(wave_field.solution, P, s.position)
        assert math.hypot(U, V) <= 1e-8


def test_field_csv(tmp_path, shear_field):
    path = shear_field.to_csv(tmp_path / "f.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["x", "y", "U", "V", "Psi", "layer"]
    assert len(rows) == 1 + 32 * 32
    assert {r[5] for r in rows[1:]} <= {"lower", "upper", "interface-band"}


def test_bore_flow_force_matches_conjugate_pair(bore, bore_params):
    p = bore_params
    h = evaluate(bore, 0.0, p.k).Y
    c = conjugate_speed(h, p.omega0)
    # flow force of the shear profile with interface height h and speed c
    y = np.linspace(0.0, 1.0, 200001)
    w = np.where(y <= h, p.omega0, p.omega1)
    psi_y = w * (y - h) + c
    integrand = -0.5 * psi_y**2 + w * y * psi_y
    shear_force = np.trapezoid(integrand, y) if hasattr(np, "trapezoid") else np.trapz(integrand, y)
    assert station_integrals(bore, p, 0.0)[2] == pytest.approx(shear_force, abs=1e-4)
    assert conjugate_height(h, p.omega0) == pytest.approx(evaluate(bore, math.pi, p.k).Y, abs=1e-3)
