import warnings

import numpy as np
import pytest

from thermoimpact import (
    AsymmetricImpactWarning,
    CallableImpact,
    ImpactModel,
    InvalidInputError,
    LinearImpact,
    PermanentImpact,
    PowerLawImpact,
    convexity_check,
    instantaneous_cost,
    model_from_config,
    model_to_config,
    perm_impact_eval,
    temp_impact_eval,
)


def test_linear_temporary_impact():
    assert temp_impact_eval(LinearImpact(2.0), 3.0) == pytest.approx(6.0)


@pytest.mark.parametrize("spec", [LinearImpact(2.0), PowerLawImpact(1.0, 0.5), PowerLawImpact(3.0, 2.0)])
def test_zero_rate_gives_zero_impact_and_cost(spec):
    assert temp_impact_eval(spec, 0.0) == 0.0
    assert instantaneous_cost(spec, 0.0) == 0.0


def test_power_law_impact_is_odd():
    assert temp_impact_eval(PowerLawImpact(1.0, 0.5), -4.0) == pytest.approx(-2.0)
    assert temp_impact_eval(PowerLawImpact(1.0, 0.5), 4.0) == pytest.approx(2.0)


def test_instantaneous_cost_examples():
    assert instantaneous_cost(LinearImpact(1.0), 2.0) == pytest.approx(4.0)
    assert instantaneous_cost(PowerLawImpact(2.0, 2.0), -1.0) == pytest.approx(2.0)


def test_power_law_cost_matches_product():
    spec = PowerLawImpact(1.7, 0.6)
    v = np.linspace(-3, 3, 41)
    np.testing.assert_allclose(spec.cost(v), spec(v) * v, rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
def test_eta_must_be_positive_and_finite(bad):
    with pytest.raises(InvalidInputError):
        LinearImpact(bad)
    with pytest.raises(InvalidInputError):
        PowerLawImpact(1.0, bad)


def test_convexity_check_quadratic_and_concave():
    v = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    assert convexity_check(v**2).is_convex
    report = convexity_check(-(v**2))
    assert not report.is_convex
    assert report.violating_indices == (1, 2, 3)


def test_convexity_check_power_2_5():
    v = np.linspace(-5, 5, 101)
    f = instantaneous_cost(PowerLawImpact(1.0, 1.5), v)
    assert convexity_check(f).is_convex


def test_convexity_check_needs_three_points():
    with pytest.raises(InvalidInputError):
        convexity_check([1.0, 2.0])


def test_convexity_default_tolerance_is_scale_aware():
    report = convexity_check(1e6 * np.array([1.0, 0.0, 1.0]))
    assert report.tolerance == pytest.approx(1e-3)


def test_permanent_impact_examples():
    assert perm_impact_eval(PermanentImpact(0.5), 2.0) == pytest.approx(1.0)
    assert perm_impact_eval(PermanentImpact(0.0), 7.3) == 0.0
    with pytest.warns(AsymmetricImpactWarning):
        lam = PermanentImpact([[1.0, 0.2], [0.0, 1.0]])
    np.testing.assert_allclose(perm_impact_eval(lam, [1.0, 1.0]), [1.2, 1.0])


def test_permanent_matrix_dimension_mismatch():
    lam = PermanentImpact(np.eye(2))
    with pytest.raises(InvalidInputError):
        perm_impact_eval(lam, [1.0, 2.0, 3.0])
    with pytest.raises(InvalidInputError):
        ImpactModel(LinearImpact(1.0), lam, assets=3)


def test_symmetric_matrix_does_not_warn():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        PermanentImpact([[1.0, 0.3], [0.3, 2.0]])


def test_negative_lambda_rejected():
    with pytest.raises(InvalidInputError):
        PermanentImpact(-0.1)


def test_config_round_trip():
    m = ImpactModel(PowerLawImpact(2.0, 0.5), PermanentImpact(0.25))
    back = model_from_config(model_to_config(m))
    assert back.temporary == m.temporary
    assert back.permanent.lam == 0.25

    cfg = {"temp.kind": "linear", "temp.eta": "1", "perm.matrix": "1,0.5,0.5,2", "assets": "2"}
    mm = model_from_config(cfg)
    np.testing.assert_allclose(mm.permanent.lam, [[1, 0.5], [0.5, 2]])
    assert model_from_config(model_to_config(mm)).assets == 2


@pytest.mark.parametrize(
    "cfg",
    [
        {"temp.kind": "cubic", "temp.eta": "1"},
        {"temp.kind": "power", "temp.eta": "1"},
        {"temp.kind": "linear"},
        {"temp.eta": "abc"},
        {"temp.eta": "1", "perm.matrix": "1,2,3", "assets": "2"},
        {"temp.eta": "1", "perm.matrix": "1", "perm.lambda": "1"},
    ],
)
def test_bad_configs(cfg):
    with pytest.raises(InvalidInputError):
        model_from_config(cfg)


def test_callable_impact_cannot_serialize():
    m = ImpactModel(CallableImpact(lambda v: v - 0.2 * v**3))
    assert m.temporary(1.0) == pytest.approx(0.8)
    with pytest.raises(InvalidInputError):
        model_to_config(m)
