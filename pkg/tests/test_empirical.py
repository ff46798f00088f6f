import math

import numpy as np
import pytest

from thermoimpact import (
    CallableImpact,
    ImpactCurveRegressor,
    ImpactModel,
    InvalidInputError,
    LinearImpact,
    PermanentImpact,
    PowerLawImpact,
    TradeTape,
    analyze,
    bound_violation_report,
    build_piecewise_constant,
    build_ramp,
    build_triangular,
    build_zero,
    convexity_test,
    estimate_impact_curve,
    estimate_work_variance,
    read_tape_csv,
    realized_variance,
    synthesize_tape,
    write_tape_csv,
)
from thermoimpact.empirical import execution_offsets, synthesize_tapes

from conftest import model


def test_noiseless_tape_without_permanent_impact_is_flat():
    tape = synthesize_tape(model(), build_triangular(1, 1), 0.0, 1e-2, 0)
    assert np.all(tape.dS == 0.0)


def test_permanent_drift():
    m = ImpactModel(LinearImpact(1.0), PermanentImpact(0.5))
    tape = synthesize_tape(m, build_piecewise_constant([0.0, 1.0], [2.0]), 0.0, 0.1, 0)
    np.testing.assert_allclose(tape.dS, 0.1, rtol=1e-14)
    assert len(tape) == 10


def test_tape_is_deterministic_in_seed():
    a = synthesize_tape(model(), build_ramp(1, 1), 0.3, 1e-3, 8)
    b = synthesize_tape(model(), build_ramp(1, 1), 0.3, 1e-3, 8)
    c = synthesize_tape(model(), build_ramp(1, 1), 0.3, 1e-3, 9)
    np.testing.assert_array_equal(a.dS, b.dS)
    assert a.pnl == b.pnl and a.pnl != c.pnl


def test_tape_validation():
    with pytest.raises(InvalidInputError):
        TradeTape([0.0, 0.5, 0.5], [1, 1, 1], [0, 0, 0], 1.0)
    with pytest.raises(InvalidInputError):
        TradeTape([0.0, 1.0], [1, 1], [0, 0], 1.0)
    with pytest.raises(InvalidInputError):
        TradeTape([0.0], [np.nan], [0], 1.0)
    with pytest.raises(InvalidInputError):
        synthesize_tape(model(), build_ramp(1, 1), 0.1, 0.5, 0)


def test_noiseless_curve_recovers_linear_generator():
    tape = synthesize_tape(model(2.0), build_ramp(1.0, 1.0), 0.0, 1e-3, 0)
    curve = estimate_impact_curve(tape, 25)
    np.testing.assert_allclose(curve.impact, 2.0 * curve.centers, atol=1e-9)
    assert curve.counts.sum() == len(tape)
    assert curve.edges[0] == pytest.approx(tape.rate.min()) and curve.edges[-1] == pytest.approx(tape.rate.max())


def test_noisy_curve_slope_within_five_percent():
    tape = synthesize_tape(model(2.0), build_ramp(1.0, 100.0), 0.2, 1e-3, 1)
    assert len(tape) == 100_000
    intercept, slope = estimate_impact_curve(tape, 20).linear_fit()
    assert slope == pytest.approx(2.0, rel=0.05)


def test_per_bin_error_shrinks_with_counts():
    errors = []
    for T in (10.0, 160.0):
        tape = synthesize_tape(model(2.0), build_ramp(1.0, T), 0.2, 1e-2, 3)
        curve = estimate_impact_curve(tape, 10)
        errors.append(np.sqrt(np.mean((curve.impact - 2 * curve.centers) ** 2)))
    assert errors[1] < errors[0] / 2


def test_constant_rate_gives_single_bin():
    tape = synthesize_tape(model(2.0), build_piecewise_constant([0, 1], [1.5]), 0.0, 0.1, 0)
    curve = estimate_impact_curve(tape, 10)
    assert curve.n_populated == 1
    with pytest.raises(InvalidInputError):
        convexity_test(curve)


def test_empty_bins_are_dropped():
    tape = synthesize_tape(model(1.0), build_triangular(1.0, 1.0), 0.0, 1e-2, 0)
    curve = estimate_impact_curve(tape, 5)
    assert curve.n_populated == 2
    assert curve.dropped_bins == (1, 2, 3)
    assert curve.counts.sum() == len(tape)


def test_raw_tape_needs_lambda():
    m = ImpactModel(LinearImpact(2.0), PermanentImpact(0.3))
    syn = synthesize_tape(m, build_ramp(1.0, 1.0), 0.0, 1e-3, 0)
    # a raw tape records execution-price moves J(v) dt + I(v) dt
    raw = TradeTape(syn.t, syn.rate, syn.dS + m.temporary(syn.rate) * syn.intervals, syn.horizon)
    with pytest.raises(InvalidInputError):
        estimate_impact_curve(raw, 10)
    curve = estimate_impact_curve(raw, 10, lam=0.3)
    np.testing.assert_allclose(curve.impact, 2.0 * curve.centers, atol=1e-9)
    np.testing.assert_allclose(execution_offsets(raw, 0.3), execution_offsets(syn), atol=1e-9)


def test_convexity_verdicts():
    ramp = build_ramp(2.0, 1.0)
    lin = estimate_impact_curve(synthesize_tape(model(1.5), ramp, 0.0, 1e-3, 0), 20)
    assert convexity_test(lin).is_convex
    concave_j = estimate_impact_curve(
        synthesize_tape(ImpactModel(PowerLawImpact(1.0, 0.5)), ramp, 0.0, 1e-4, 0), 21
    )
    assert convexity_test(concave_j).is_convex
    bad = estimate_impact_curve(
        synthesize_tape(ImpactModel(CallableImpact(lambda v: v - 0.2 * v**3)), ramp, 0.0, 1e-3, 0), 20
    )
    verdict = convexity_test(bad)
    assert not verdict.is_convex
    # f'' = 2 - 2.4 v^2 < 0 exactly when |v| > 0.913
    assert all(abs(v) > 0.85 for v in verdict.violating_rates)


def test_convexity_noise_tolerance():
    tape_list = synthesize_tapes(model(1.0), build_ramp(1.0, 1.0), 0.5, 1e-3, range(20))
    curve = estimate_impact_curve(tape_list, 20)
    assert convexity_test(curve, z=3).is_convex


def test_impact_curve_regressor():
    tape = synthesize_tape(model(2.0), build_ramp(1.0, 1.0), 0.0, 1e-3, 0)
    reg = ImpactCurveRegressor(n_bins=15).fit(tape.rate.reshape(-1, 1), execution_offsets(tape))
    x = np.linspace(-0.9, 0.9, 7)
    np.testing.assert_allclose(reg.predict(x.reshape(-1, 1)), 2 * x, atol=1e-9)
    # predictions are held flat beyond the outermost bin centers
    assert reg.score(tape.rate.reshape(-1, 1), execution_offsets(tape)) > 0.999
    assert reg.get_params() == {"n_bins": 15}


def test_realized_variance_examples():
    assert realized_variance([5.0] * 10, 1.0) == 0.0
    assert realized_variance([1.0, 1.1], 1.0) == pytest.approx(0.01)
    rng = np.random.default_rng(0)
    dt = 1e-4
    path = np.concatenate([[100.0], 100.0 + np.cumsum(0.2 * math.sqrt(dt) * rng.standard_normal(10_000))])
    assert realized_variance(path, 1.0) == pytest.approx(0.04, rel=0.05)
    assert realized_variance(path, 1.0, mode="log") == pytest.approx(0.04 / 100**2, rel=0.06)
    with pytest.raises(InvalidInputError):
        realized_variance([1.0, -1.0], 1.0, mode="log")
    with pytest.raises(InvalidInputError):
        realized_variance([1.0], 1.0)


def test_realized_variance_unbiased_over_seeds():
    dt, n = 1e-3, 1000
    estimates = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        path = np.concatenate([[0.0], np.cumsum(0.2 * math.sqrt(dt) * rng.standard_normal(n))])
        estimates.append(realized_variance(path, n * dt))
    est = np.asarray(estimates)
    assert abs(est.mean() - 0.04) <= 3 * est.std(ddof=1) / math.sqrt(est.size)


@pytest.mark.parametrize("builder,W,V", [(build_triangular, 1.0, 1 / 12), (build_ramp, 1 / 3, 1 / 30)])
def test_work_variance_estimates(builder, W, V):
    tape = synthesize_tape(model(), builder(1.0, 1.0), 0.0, 1e-4, 0)
    est = estimate_work_variance(tape, model())
    assert est.work == pytest.approx(W, abs=1e-3)
    assert est.variance_term == pytest.approx(V, abs=1e-3)


def test_work_variance_zero_tape():
    tape = synthesize_tape(model(), build_zero(1.0), 0.1, 1e-2, 0)
    assert tuple(estimate_work_variance(tape, model())) == (0.0, 0.0)


def test_work_variance_first_order_in_dt():
    s, m = build_ramp(1.0, 1.0), model()
    errs = []
    for dt in (1e-2, 1e-3, 1e-4):
        est = estimate_work_variance(synthesize_tape(m, s, 0.0, dt, 0), m)
        errs.append(abs(est.variance_term - 1 / 30) + abs(est.work - 1 / 3))
    assert errs[0] / errs[1] == pytest.approx(10, rel=0.2)
    assert errs[1] / errs[2] == pytest.approx(10, rel=0.2)


def test_report_frequency_matches_exact_probability():
    m, s = model(0.1), build_triangular(1, 1)
    tapes = synthesize_tapes(m, s, 0.2, 1e-2, range(10_000))
    rep = bound_violation_report(tapes, m, 0.2)
    exact = analyze(m, s, 0.2).profit_prob_exact
    se = math.sqrt(exact * (1 - exact) / rep.n_tapes)
    assert abs(rep.profitable_frequency - exact) <= 3 * se
    assert not rep.aggregate_flagged


def test_report_noiseless_and_adversarial():
    m, s = model(), build_triangular(1, 1)
    tapes = synthesize_tapes(m, s, 0.0, 1e-2, range(5))
    rep = bound_violation_report(tapes, m, 0.0)
    assert rep.profitable_frequency == 0.0 and not rep.flagged_tapes
    t = tapes[0]
    cheat = TradeTape(t.t, t.rate, t.dS, t.horizon, pnl=0.5)
    rep = bound_violation_report([cheat] + tapes[1:], m, 0.1)
    assert rep.flagged_tapes == (0,)
    # one profitable tape in five is within sampling error of the aggregate bound
    assert not rep.aggregate_flagged
    rep = bound_violation_report([cheat] * 10 + tapes * 8, m, 0.1)
    assert rep.aggregate_flagged


def test_report_needs_pnl():
    tape = TradeTape([0.0, 0.5], [1.0, -1.0], [0.0, 0.0], 1.0)
    with pytest.raises(InvalidInputError):
        bound_violation_report([tape], model(), 0.1)


def test_report_bytes_are_reproducible():
    m, s = model(0.5), build_ramp(1, 1)
    make = lambda: bound_violation_report(synthesize_tapes(m, s, 0.3, 1e-2, range(30)), m, 0.3)
    a, b = make(), make()
    assert a.to_json() == b.to_json()
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().splitlines()[0].startswith("index,work,variance_term")


def test_tape_csv_round_trip(tmp_path):
    tape = synthesize_tape(model(), build_ramp(1, 1), 0.2, 1e-2, 4)
    path = tmp_path / "tape.csv"
    write_tape_csv(tape, path)
    assert path.read_text().splitlines()[0] == "t,rate,dS"
    back = read_tape_csv(path)
    np.testing.assert_array_equal(back.dS, tape.dS)
    assert back.horizon == pytest.approx(1.0)
    path.write_text("t,rate\n0,1\n")
    with pytest.raises(InvalidInputError):
        read_tape_csv(path)
