import math

import numpy as np
import pytest
from scipy.special import ndtr

from thermoimpact import (
    CallableImpact,
    ConvergenceError,
    ExponentialKernel,
    ImpactModel,
    InvalidInputError,
    LinearImpact,
    NonRoundTripError,
    PermanentImpact,
    PnLStats,
    PowerLawImpact,
    PowerLawKernel,
    Strategy,
    analyze,
    build_piecewise_constant,
    build_ramp,
    build_square_wave,
    build_triangular,
    build_zero,
    chernoff_bound,
    chernoff_optimum,
    dissipated_work,
    general_work_lagrangian,
    heat_variance,
    inventory,
    market_temperature,
    multi_asset_bound,
    pnl_distribution,
    power_law_bound,
    profit_probability_exact,
    random_roundtrip,
    scaling_bound,
    second_law_verify,
    stack_assets,
    transient_work,
)

from conftest import midpoint, model


def stats(W, var):
    return PnLStats.from_moments(W, var, sigma=1.0)


def test_dissipated_work_closed_forms():
    for alpha, vbar, T in [(1.0, 1.0, 1.0), (0.3, 2.0, 5.0)]:
        m = model(alpha)
        assert dissipated_work(m, build_triangular(vbar, T)) == pytest.approx(alpha * vbar**2 * T, rel=1e-13)
        assert dissipated_work(m, build_ramp(vbar, T)) == pytest.approx(alpha * vbar**2 * T / 3, rel=1e-13)
    assert dissipated_work(model(2.0, 0.7), build_zero(1.0)) == 0.0


def test_power_law_work_uses_exponent_gamma_plus_one():
    s = build_ramp(1.0, 1.0)
    assert dissipated_work(model(2.0, gamma=2.0), s) == pytest.approx(2.0 * 0.25, rel=1e-10)


def test_non_roundtrip_rejected_with_residual():
    with pytest.raises(NonRoundTripError) as info:
        dissipated_work(model(), build_piecewise_constant([0, 1], [1.0]))
    assert info.value.residual == pytest.approx(1.0)


def test_permanent_term_vanishes_for_matrix_impact():
    s = stack_assets(random_roundtrip(1, 5, 1.0, 1.0), random_roundtrip(2, 5, 1.0, 1.0))
    lam = np.array([[1.0, 0.4], [0.4, 2.0]])
    base = ImpactModel(LinearImpact(1.0), PermanentImpact(0.0), assets=2)
    with_perm = ImpactModel(LinearImpact(1.0), PermanentImpact(lam), assets=2)
    assert dissipated_work(with_perm, s) == pytest.approx(dissipated_work(base, s), abs=1e-12)


def test_antisymmetric_permanent_impact_changes_work():
    # the antisymmetric term is twice the signed area enclosed by (q1, q2), zero for retraced loops
    s = stack_assets(random_roundtrip(1, 5, 1.0, 1.0), random_roundtrip(2, 5, 1.0, 1.0))
    with pytest.warns(UserWarning):
        m = ImpactModel(LinearImpact(1.0), PermanentImpact([[0.0, 1.0], [-1.0, 0.0]]), assets=2)
    base = ImpactModel(LinearImpact(1.0), assets=2)
    assert abs(dissipated_work(m, s) - dissipated_work(base, s)) > 1e-3


def test_lagrangian_matches_dissipated_work():
    s = build_triangular(1.0, 1.0)
    W = general_work_lagrangian(lambda v, q: 2.5 * v * v, s)
    assert W == pytest.approx(dissipated_work(model(2.5), s), rel=1e-9)


def test_lagrangian_state_dependent_against_riemann():
    s = build_triangular(1.0, 1.0)
    W = general_work_lagrangian(lambda v, q: v * v * (1 + q * q), s)
    qf = lambda t: inventory(s)(t).ravel()
    oracle = midpoint(lambda t: s.rate(t).ravel() ** 2 * (1 + qf(t) ** 2), 0, 1, 10**6)
    assert W > 0
    assert W == pytest.approx(oracle, rel=1e-9)
    assert W == pytest.approx(1 + 1 / 12, rel=1e-10)


def test_lagrangian_zero_and_rest_check():
    s = build_ramp(1.0, 1.0)
    assert general_work_lagrangian(lambda v, q: 0.0, s) == 0.0
    with pytest.raises(InvalidInputError):
        general_work_lagrangian(lambda v, q: 1.0 + v * v, s)


def test_lagrangian_nonconvergence_raises():
    s = build_triangular(1.0, 1.0)
    wild = lambda v, q: v * v * math.sin(1e7 * q) if q > 0 else 0.0
    with pytest.raises(ConvergenceError):
        general_work_lagrangian(wild, s, rtol=1e-14)


def _double_riemann(kernel, s, n):
    h = s.horizon / n
    t = h * (np.arange(n) + 0.5)
    v = s.rate(t).ravel()
    tau = t[:, None] - t[None, :]
    G = np.where(tau > 0, kernel(np.maximum(tau, h)), 0.0)
    return float(v @ G @ v * h * h + 0.5 * kernel(0.0) * np.sum(v * v) * h * h)


def test_transient_exponential_triangular_against_brute_force():
    kern, s = ExponentialKernel(1.0, 1.0), build_triangular(1.0, 1.0)
    assert transient_work(kern, s) == pytest.approx(_double_riemann(kern, s, 2000), rel=1e-4)


def test_transient_exponential_linear_rates_against_brute_force():
    kern, s = ExponentialKernel(2.0, 3.0), build_ramp(1.0, 1.0)
    assert transient_work(kern, s) == pytest.approx(_double_riemann(kern, s, 2000), rel=1e-4)


def test_transient_closed_form_matches_quadrature_path():
    kern, s = ExponentialKernel(1.5, 0.7), random_roundtrip(4, 6, 1.0, 2.0)
    sloped = Strategy(s.knots, s.const, np.zeros_like(s.slope) + 1e-300)
    assert transient_work(kern, s) == pytest.approx(transient_work(kern, sloped), rel=1e-8)


def test_transient_constant_kernel_vanishes_on_roundtrip():
    for s in (build_triangular(1, 1), build_ramp(2, 3), random_roundtrip(7, 9, 1.0, 1.0)):
        assert transient_work(ExponentialKernel(1.0, 0.0), s) == pytest.approx(0.0, abs=1e-12)


def test_transient_fast_decay_tends_to_zero():
    s = build_triangular(1.0, 1.0)
    values = [transient_work(ExponentialKernel(1.0, rho), s) for rho in (1e2, 1e4, 1e6)]
    assert values[0] > values[1] > values[2] > 0
    assert values[2] < 1e-5


def test_power_law_kernel_constant_rate():
    kappa, delta, T = 1.3, 0.4, 2.0
    s = build_piecewise_constant([0.0, T], [1.0])
    expected = kappa * T ** (2 - delta) / ((1 - delta) * (2 - delta))
    assert transient_work(PowerLawKernel(kappa, delta), s) == pytest.approx(expected, rel=1e-8)


def test_power_law_kernel_rejects_delta():
    with pytest.raises(InvalidInputError):
        PowerLawKernel(1.0, 1.0)


def test_heat_variance():
    s = build_triangular(1.0, 1.0)
    assert heat_variance(1.0, s) == pytest.approx(1 / 12)
    assert heat_variance(0.0, s) == 0.0
    two = stack_assets(s, build_zero(1.0))
    assert heat_variance(np.eye(2), two) == pytest.approx(1 / 12, rel=1e-14)
    with pytest.raises(InvalidInputError):
        heat_variance(np.eye(3), two)


def test_multi_asset_heat_variance_against_oracle():
    s = stack_assets(random_roundtrip(11, 4, 1.0, 1.0), build_ramp(1.0, 1.0))
    Sigma = np.array([[0.3, 0.1], [-0.2, 0.5]])
    C = Sigma @ Sigma.T
    qf = lambda t: inventory(s)(t).reshape(-1, 2)
    oracle = midpoint(lambda t: np.einsum("ni,ij,nj->n", qf(t), C, qf(t)), 0, 1, 200_000)
    assert heat_variance(Sigma, s) == pytest.approx(oracle, rel=1e-8)


def test_pnl_distribution():
    law = pnl_distribution(model(0.5), build_triangular(2.0, 3.0), 0.4)
    assert law.mean == pytest.approx(-0.5 * 4 * 3)
    assert law.variance == pytest.approx(0.16 * 4 * 27 / 12)
    assert tuple(pnl_distribution(model(), build_zero(1.0), 1.0)) == (0.0, 0.0)
    law = pnl_distribution(model(), build_ramp(1, 1), 1.0)
    assert law.mean == pytest.approx(-1 / 3) and law.variance == pytest.approx(1 / 30)


def test_profit_probability_examples():
    assert profit_probability_exact(stats(0.0, 1.0)) == pytest.approx(0.5)
    assert profit_probability_exact(stats(1.0, 1.0)) == pytest.approx(0.158655253931457, rel=1e-12)
    st = analyze(model(), build_triangular(1, 1), 1.0)
    assert st.profit_prob_exact == pytest.approx(ndtr(-math.sqrt(12)), rel=1e-14)
    assert st.profit_prob_exact == pytest.approx(2.66e-4, rel=0.01)
    assert profit_probability_exact(stats(1.0, 0.0)) == 0.0
    assert profit_probability_exact(stats(0.0, 0.0)) == 1.0


def test_chernoff_examples():
    for alpha, sigma, T in [(1, 1, 1), (0.5, 2, 3)]:
        st = analyze(model(alpha), build_triangular(1.0, T), sigma)
        assert st.chernoff_bound == pytest.approx(math.exp(-6 * alpha**2 / (sigma**2 * T)), rel=1e-12)
        for n in (2, 4):
            st = analyze(model(alpha), build_square_wave(1.0, T, n), sigma)
            assert st.chernoff_bound == pytest.approx(math.exp(-6 * n * n * alpha**2 / (sigma**2 * T)), rel=1e-10)
    assert chernoff_bound(stats(1.0, 0.5)) == pytest.approx(math.exp(-1))


def test_chernoff_optimum():
    opt = chernoff_optimum(stats(1.0, 1.0))
    assert opt.theta_star == 1.0 and opt.bound == pytest.approx(math.exp(-0.5))
    opt = chernoff_optimum(stats(2.0, 1.0))
    assert opt.theta_star == 2.0 and opt.bound == pytest.approx(math.exp(-2))
    assert opt.theta_numeric == pytest.approx(opt.theta_star, rel=1e-8)
    with pytest.raises(InvalidInputError):
        chernoff_optimum(stats(0.0, 1.0))


def test_market_temperature():
    assert market_temperature(stats(1.0, 1.0)) == 1.0
    st = analyze(model(), build_triangular(1, 1), 1.0)
    assert market_temperature(st) == pytest.approx(12.0)
    assert math.exp(-st.beta_v * st.work / 2) == pytest.approx(st.chernoff_bound, rel=1e-14)
    with pytest.raises(InvalidInputError):
        market_temperature(stats(1.0, 0.0))


def test_scaling_bound():
    assert scaling_bound(1, 1, 1, 1) == pytest.approx(math.exp(-0.5))
    assert scaling_bound(1, 1, 1, 1e12) == pytest.approx(1.0, abs=1e-11)
    c1, c2, T = 0.7, 0.2, 3.0
    assert scaling_bound(c1, c2, 1.3, T) == pytest.approx(
        chernoff_bound(PnLStats.from_moments(c1 * T, c2 * T**3, 1.3)), rel=1e-14
    )


def test_multi_asset_bound_examples():
    s1 = build_triangular(1.0, 1.0)
    b = multi_asset_bound(0.8, s1, model())
    single = analyze(model(), s1, 0.8).chernoff_bound
    assert b.exact_variance_bound == pytest.approx(single, rel=1e-12)
    assert b.trace_bound == pytest.approx(single, rel=1e-12)

    s2 = stack_assets(build_zero(1.0), s1)
    m2 = ImpactModel(LinearImpact(1.0), assets=2)
    b = multi_asset_bound(np.diag([1.0, 0.0]), s2, m2)
    assert b.exact_variance == 0.0 and b.exact_variance_bound == 0.0
    assert b.trace_bound == pytest.approx(math.exp(-6))


def test_power_law_bound_examples():
    tri, ramp = build_triangular(1, 1), build_ramp(1, 1)
    assert power_law_bound(0.7, 1.0, tri, 1.3) == pytest.approx(analyze(model(0.7), tri, 1.3).chernoff_bound, rel=1e-12)
    assert power_law_bound(1.0, 2.0, tri, 1.0) == pytest.approx(math.exp(-6), rel=1e-10)
    # int |v|^3 on the unit ramp is 1/4, so the exponent is (1/4)^2 / (2/30)
    assert power_law_bound(1.0, 2.0, ramp, 1.0) == pytest.approx(math.exp(-(0.25**2) * 15), rel=1e-9)


def test_second_law_examples():
    for s in (build_triangular(1, 1), build_ramp(1, 1), build_square_wave(1, 1, 3)):
        res = second_law_verify(model(0.5, 0.3), s)
        assert res.holds and res.work > 0
    res = second_law_verify(model(), build_zero(1.0))
    assert res.holds and res.work == 0.0
    with pytest.raises(NonRoundTripError):
        second_law_verify(model(), build_piecewise_constant([0, 1], [1.0]))


def test_nonconvex_cost_breaks_second_law():
    # f(v) = v^2 - v^4 is negative for |v| > 1
    m = ImpactModel(CallableImpact(lambda v: v - v**3))
    res = second_law_verify(m, build_triangular(2.0, 1.0))
    assert not res.holds and res.work < 0


def test_pnl_stats_serialization_keys():
    d = analyze(model(), build_triangular(1, 1), 1.0).to_dict()
    assert list(d) == [
        "work", "variance_term", "sigma", "mean_pnl", "pnl_variance",
        "profit_prob_exact", "chernoff_bound", "beta_v",
    ]
