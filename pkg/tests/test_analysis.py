import math

import numpy as np
import pytest

from leraylab import analysis as an
from leraylab.analysis import PowerKernel, VolterraProblem


def test_product_weights_exact_for_linear():
    t = np.sort(np.r_[0.0, np.random.default_rng(0).uniform(0, 1, 9), 1.0])
    W = an.product_weights(t, 0.5)
    # int_0^1 (1-s)^{-1/2} s ds = 4/3
    assert W[-1] @ t == pytest.approx(4 / 3, abs=1e-13)
    assert np.allclose(np.triu(W, 1), 0)
    np.testing.assert_allclose(an.product_weight_row(t, 5, 0.5), W[5, :6])


def test_power_kernel_call_and_weights():
    g = PowerKernel(2.0)
    assert g(4.0) == pytest.approx(1.0)
    t = np.linspace(0, 1, 5)
    assert g.weights(t)[-1].sum() == pytest.approx(4.0)


def test_volterra_closed_form_values():
    x = np.array([0.0, 1.0])
    v = an.volterra_closed_form(1.0, 1.0, x)
    assert v[0] == 1.0
    assert v[1] == pytest.approx(math.exp(math.pi) * (1 + math.erf(math.sqrt(math.pi))), rel=1e-14)
    assert v[1] == pytest.approx(45.998, abs=0.01)


def test_volterra_solve_accuracy():
    x, phi = an.volterra_solve(VolterraProblem(1.0, 1.0))
    exact = an.volterra_closed_form(1.0, 1.0, x)
    assert np.max(np.abs(phi - exact) / exact) < 1e-6
    x2, raw = an.volterra_solve(VolterraProblem(1.0, 1.0, M=256), extrapolate=False)
    assert np.max(np.abs(raw - an.volterra_closed_form(1.0, 1.0, x2))) > 1e-7


def test_volterra_halving_change_small():
    assert an.volterra_halving_change(VolterraProblem(0.5, 2.0, M=512)) < 1e-6


def test_volterra_series_matches_closed_form():
    for C, D, x in ((1.0, 1.0, 1.0), (0.3, 2.0, 0.7)):
        assert an.volterra_series(C, D, x) == pytest.approx(
            float(an.volterra_closed_form(C, D, x)), rel=1e-8)
    with pytest.raises(ValueError):
        an.volterra_series(5.0, 1.0, 10.0, k_max=10)


def test_volterra_problem_validation():
    for kw in ({"C": -1.0, "D": 1.0}, {"C": 1.0, "D": math.inf}, {"C": 1.0, "D": 1.0, "x_max": 0.0},
               {"C": 1.0, "D": 1.0, "alpha": 0.3}):
        with pytest.raises(ValueError):
            VolterraProblem(**kw)
    assert an.problem_record(VolterraProblem(1.0, 2.0))["D"] == 2.0


def test_successive_approximations_count():
    prob = VolterraProblem(1.0, 1.0, M=256)
    _, phi, diffs = an.successive_approximations(prob, tol=1e-8)
    assert diffs[-1] <= 1e-8
    k = an.predicted_iterations(1.0, 1.0, 1.0, 1e-8)
    assert abs(len(diffs) - k) <= 2
    assert an.predicted_iterations(0.0, 1.0, 1.0) == 1


def test_quadratic_compare_verdicts():
    t = np.linspace(0, 0.04, 41)
    g = PowerKernel(0.5)
    b = 1.0
    phi = 1.5 * np.ones_like(t)
    f = 0.5 * np.ones_like(t)
    v = an.quadratic_compare(t, f, phi, g, 0.5, b)
    assert v.passed and v.margin == pytest.approx(1.0)
    assert len(v.profile_rows()) == t.size
    assert an.quadratic_compare(t, f, phi, g, 2.0, b).status == "not_applicable"
    bad = an.quadratic_compare(t, 3 * f, phi, g, 0.5, b)
    assert bad.status == "not_applicable" and "sub" in bad.detail


def test_majorant_presets():
    c = an.majorant_preset("constant", c=2.0)
    assert c.abel_square(1.0, 1.0) == pytest.approx(8.0)
    gr = an.majorant_preset("grad", c=1.0)
    assert gr.beta == 0.25
    t = np.linspace(0, 1, 4001)
    num = PowerKernel(1.0).weights(t)[-1] @ np.nan_to_num(gr(t) ** 2, posinf=0.0)
    assert gr.abel_square(1.0, 1.0) == pytest.approx(num, rel=2e-2)
    assert an.majorant_preset("lp", c=1.0, p=6).beta == 0.25
    with pytest.raises(ValueError):
        an.majorant_preset("lp", c=1.0, p=3)
    with pytest.raises(ValueError):
        an.majorant_preset("bogus")


def test_supersolution_boundary_constant():
    cp, M = 0.1, 2.0
    phi = an.ConstantMajorant((1 + cp) * M)
    t_star = 1.0 / (4 * (1 + cp) ** 4 * M**2)
    t = np.linspace(0, 2 * t_star, 201)
    margin = an.supersolution_verify(phi, PowerKernel(cp), M, t)
    cell = an.first_violation(t, margin)
    assert cell[0] <= t_star <= cell[1]
    assert an.first_violation(t[:50], margin[:50]) is None
    sampled = an.supersolution_verify(phi(t), PowerKernel(cp), lambda s: M + 0 * s, t)
    np.testing.assert_allclose(sampled, margin, atol=1e-12)


def test_linear_solve_matches_closed_form():
    t = np.linspace(0, 1, 513)
    phi = an.linear_solve(t, PowerKernel(1.0), 1.0, 1.0)
    assert phi[-1] == pytest.approx(float(an.volterra_closed_form(1.0, 1.0, 1.0)), rel=1e-4)
    v = an.linear_compare(t, 0.9 * phi, PowerKernel(1.0), 1.0, 0.9, 1.0)
    assert v.passed


def test_min_kernel_total_and_cumulative():
    A, B = 2.0, 3.0
    assert an.min_kernel_total(A, B) == pytest.approx(3 * A ** (2 / 3) * B ** (1 / 3))
    from scipy import integrate
    ts = (B / A) ** (2 / 3)
    num = (integrate.quad(lambda s: A / math.sqrt(s), 0, ts)[0]
           + integrate.quad(lambda s: B / s**2, ts, np.inf)[0])
    assert an.min_kernel_total(A, B) == pytest.approx(num, rel=1e-8)
    cum = an.min_kernel_cumulative(A, B, np.array([0.0, ts, 1e8]))
    assert cum[0] == 0 and cum[1] == pytest.approx(2 * A * math.sqrt(ts))
    assert cum[2] == pytest.approx(an.min_kernel_total(A, B), rel=1e-6)
    assert an.min_kernel_total(0.0, 1.0) == 0.0


def test_crossing_time_and_min_kernel_compare():
    g = PowerKernel(1.0)

    def h(s):
        return np.asarray(s, float) ** -2.0
    tau = an.crossing_time(g, h, 1.0)
    assert tau == pytest.approx(1.0, rel=1e-2)
    assert an.crossing_time(g, lambda s: 0 * np.asarray(s), 1.0) is None
    t = np.linspace(0, 2, 11)
    v = an.min_kernel_compare(t, 0.005 * np.ones_like(t), PowerKernel(0.01),
                              lambda s: 0.01 / np.asarray(s, float) ** 2, 0.005, 0.01, 0.1)
    assert v.passed, v.detail
