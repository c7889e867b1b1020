import math

import numpy as np
import pytest

from leraylab import fields as fl
from leraylab import stokes as st
from leraylab.fields import Grid
from leraylab.stokes import TimeMesh


@pytest.fixture(scope="module")
def g():
    return Grid(2 * math.pi, 32)


@pytest.fixture(scope="module")
def u0(g):
    return fl.random_solenoidal(g, np.random.default_rng(1))


def _shear_mode(g):
    x = g.x[0]
    return np.stack([0 * x, np.sin(x), 0 * x])


def test_time_mesh_validation():
    with pytest.raises(ValueError):
        TimeMesh(np.array([0.1, 0.2]))
    with pytest.raises(ValueError):
        TimeMesh(np.array([0.0, 0.2, 0.1]))
    with pytest.raises(ValueError):
        TimeMesh.uniform(0.0, 4)
    m = TimeMesh.graded(1.0, 4)
    assert m.T == 1.0 and m.M == 4 and len(m) == 5
    assert m.nodes[1] == pytest.approx(1 / 16)


def test_duhamel_weights_exact_on_linear():
    m = TimeMesh.uniform(1.0, 7)
    W = st.duhamel_weights(m, 0.5)
    assert W[-1].sum() == pytest.approx(2.0, abs=1e-13)
    assert W[-1] @ m.nodes == pytest.approx(4 / 3, abs=1e-13)


def test_time_integral_simpson_and_trapezoid():
    m = TimeMesh.uniform(1.0, 8)
    assert st.time_integral(m, m.nodes**2)[-1] == pytest.approx(1 / 3, abs=1e-14)
    mg = TimeMesh.graded(1.0, 400)
    assert st.time_integral(mg, np.ones(401))[-1] == pytest.approx(1.0)


def test_phi_functions_continuity():
    z = np.array([-1.0 - 1e-12, -1.0 + 1e-12, -1e-9, 0.0, -5.0])
    e, p1, p2, p3 = st.phi_functions(z, 3)
    assert p1[3] == 1.0 and p2[3] == 0.5 and p3[3] == pytest.approx(1 / 6)
    assert p1[0] == pytest.approx(p1[1], rel=1e-10)
    assert p2[-1] == pytest.approx((math.exp(-5) - 1 + 5) / 25)


def test_zero_forcing_is_heat_flow(g, u0):
    m = TimeMesh.uniform(0.5, 16)
    tr = st.stokes_solve_general(g, u0, None, m)
    assert np.abs(tr.u[-1] - st.heat_evolve(g, u0, 0.5)).max() < 1e-12
    assert st.energy_dissipation_check(tr) < 1e-10


def test_constant_single_mode_closed_form(g, u0):
    m = TimeMesh.uniform(0.5, 16)
    F0 = _shear_mode(g)
    tr = st.stokes_solve_general(g, 0 * u0, [F0] * len(m), m, with_pressure=True)
    a = 4 * math.pi**2 / g.L**2
    assert np.abs(tr.u[-1] - F0 * (1 - math.exp(-a * 0.5)) / a).max() < 1e-12
    assert np.abs(tr.p[0]).max() < 1e-12


def test_requires_solenoidal_data(g):
    bad = np.stack([np.sin(g.x[0]), 0 * g.r, 0 * g.r])
    with pytest.raises(ValueError):
        st.stokes_solve_general(g, bad, None, TimeMesh.uniform(1.0, 2))


def test_forcing_length_checked(g, u0):
    with pytest.raises(ValueError):
        st.stokes_solve_general(g, u0, [u0], TimeMesh.uniform(1.0, 2))


def test_routes_agree(g, u0):
    rng = np.random.default_rng(2)
    m = TimeMesh.uniform(0.5, 16)
    Y, Z = fl.random_solenoidal(g, rng), fl.random_solenoidal(g, rng)
    Ys = [Y * math.cos(s) for s in m.nodes]
    Zs = [Z] * len(m)
    ta = st.stokes_solve_advective(g, u0, Ys, Zs, m, with_pressure=True)
    tg = st.stokes_solve_general(g, u0, [-st.convective_term(g, y, z) for y, z in zip(Ys, Zs)], m)
    assert max(np.abs(a - b).max() for a, b in zip(ta.u, tg.u)) < 1e-10
    p2 = st.stokes_pressure_general(g, -st.convective_term(g, Y, Z))
    np.testing.assert_allclose(ta.p[0], p2, atol=1e-10 * np.abs(p2).max())


def test_bounds_hold(g, u0):
    rng = np.random.default_rng(3)
    m = TimeMesh.uniform(0.5, 16)
    Y = fl.random_solenoidal(g, rng, amplitude=0.5)
    Ys = [Y] * len(m)
    tr = st.stokes_solve_advective(g, u0, Ys, Ys, m)
    mi, mg = st.smoothing_bound_margins(tr)
    assert mi <= 0 and mg <= 0
    assert st.l2_bound_margin(tr) <= 0
    assert st.advective_l2_margin(tr, Ys, Ys) <= 0
    assert st.energy_dissipation_check(tr) < 1e-9


def test_nonlinear_cancellation(g, u0):
    Y = fl.random_solenoidal(g, np.random.default_rng(4))
    assert st.nonlinear_cancellation(g, Y, u0) < 1e-12
    assert st.nonlinear_cancellation(g, Y, 0 * u0) == 0.0


def test_step_integrals_branches_agree():
    # a h straddling the stiff switch gives the same integrals from both formulas
    h = 1.0
    rng = np.random.default_rng(5)
    c, f0, f1 = (np.repeat(rng.normal(size=(1, 1)) + 1j * rng.normal(size=(1, 1)), 2, axis=1)
                 for _ in range(3))
    lo = st.step_integrals(np.array([0.5 - 1e-9, 0.5 + 1e-9]), c, f0, f1, h)
    assert lo[0][0] == pytest.approx(lo[0][1], rel=1e-6)
    assert lo[1][0] == pytest.approx(lo[1][1], rel=1e-6)


def test_true_forcing_defect_converges(g, u0):
    F0 = _shear_mode(g)

    def F(s):
        return math.exp(-s) * F0
    d = [st.energy_dissipation_check(st.stokes_solve_general(g, u0, F, TimeMesh.uniform(1.0, M)), F)
         for M in (8, 16, 32)]
    assert d[0] > d[1] > d[2]
    assert d[1] / d[2] > 3.5


def test_oseen_direct_matches_spectral():
    # the direct sum has no periodic images, so compare away from the box edge
    g = Grid(12.0, 16)
    F = fl.random_solenoidal(g, np.random.default_rng(6), width=(1.0, 1.2), spread=0.3)
    t = 0.8
    spec = st.heat_evolve(g, F, t)
    direct = st.oseen_convolve_direct(g, F, t)
    inner = g.r < g.L / 4
    assert np.abs(direct - spec)[:, inner].max() < 1e-3 * np.abs(spec).max()
    with pytest.raises(ValueError):
        st.oseen_convolve_direct(Grid(1.0, 32), np.zeros((3, 32, 32, 32)), 1.0)


def test_trajectory_norms(g, u0):
    tr = st.stokes_solve_general(g, u0, None, TimeMesh.uniform(0.1, 2))
    assert np.all(np.diff(tr.norms("l2")) < 0)
    assert tr.norms("linf")[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        tr.norms("l3")
