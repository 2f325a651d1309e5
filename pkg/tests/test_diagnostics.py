import numpy as np
import pytest
from scipy import stats

from posterior_lab.gmm import get_preset
from posterior_lab.operators import LinearOperator, Measurement
from posterior_lab.pipeline.diagnostics import (
    ks_normal_test,
    posterior_necessary_conditions,
    term_ratio_curve,
    term_ratio_summary,
    wt_curve,
    wt_shape_summary,
)
from posterior_lab.schedule import make_ve_geometric, make_vp_linear, respace


def test_ks_matches_scipy_asymptotic():
    values = np.random.default_rng(0).normal(0.0, 0.7, 500)
    for sigma in (0.7, 1.0):
        d, p = ks_normal_test(values, sigma)
        ref = stats.kstest(values, "norm", args=(0.0, sigma), method="asymp")
        assert d == pytest.approx(ref.statistic, rel=1e-12)
        assert p == pytest.approx(ref.pvalue, rel=1e-8)
    assert ks_normal_test(values, 0.7)[1] > ks_normal_test(values, 1.0)[1]
    with pytest.raises(ValueError):
        ks_normal_test([], 1.0)
    with pytest.raises(ValueError):
        ks_normal_test(values, 0.0)


@pytest.mark.parametrize("kind", ["vp", "ve"])
def test_wt_curve_gaussian_prior_closed_form(gauss1d, kind):
    schedule = respace(make_vp_linear(1000), 50) if kind == "vp" else make_ve_geometric(50)
    sigma_y = 0.3
    meas = Measurement(y=np.array([0.7]), op=LinearOperator.identity(1), sigma_y=sigma_y)
    curve = wt_curve(gauss1d, meas, schedule, 4)
    assert list(curve.columns) == ["t", "w_t", "residual_norm", "zeta_equiv", "degenerate"]
    assert curve["t"].tolist() == list(range(49, -1, -1))
    sigma = schedule.ve_sigmas[curve["t"].to_numpy()]
    expected = 1.0 / (2.0 * (sigma_y**2 + sigma**2 / (1.0 + sigma**2)))
    np.testing.assert_allclose(curve["w_t"].to_numpy(), expected, rtol=1e-8)
    assert not curve["degenerate"].any()
    np.testing.assert_allclose(curve["zeta_equiv"], curve["w_t"] * curve["residual_norm"], rtol=1e-12)
    shape = wt_shape_summary(curve["w_t"].to_numpy())
    assert shape["first_half_mean"] < shape["second_half_mean"]


@pytest.mark.parametrize("sigma_y", [0.01, 0.05, 0.2])
def test_wt_curve_doublewell_shape(doublewell, sigma_y):
    meas = Measurement(y=np.array([1.5, 0.0]), op=LinearOperator.identity(2), sigma_y=sigma_y)
    curve = wt_curve(doublewell, meas, make_ve_geometric(1000), 0)
    assert np.all(np.isfinite(curve["w_t"]))
    weights = wt_shape_summary(curve["w_t"].to_numpy())
    assert weights["first_half_mean"] < weights["second_half_mean"]
    if sigma_y == 0.2:
        assert wt_shape_summary(curve["zeta_equiv"].to_numpy())["interior_peak"]


def test_wt_shape_summary():
    rising = wt_shape_summary(np.linspace(0.0, 1.0, 20))
    assert rising["last_quarter_nondecreasing_fraction"] == 1.0
    assert rising["peak_index"] == 19
    assert rising["interior_peak"] is False
    hump = wt_shape_summary(np.array([0.0, 1.0, 3.0, 2.0, 1.0, 0.5, 0.2, 0.1]))
    assert hump["peak_index"] == 2
    assert hump["interior_peak"] is True
    assert hump["last_quarter_nondecreasing_fraction"] == 0.0


def test_term_ratio_curve_dominance(doublewell):
    schedule = respace(make_vp_linear(1000), 100)
    curve = term_ratio_curve(doublewell, [1.5, 0.0], [0.01, 1e9], schedule, rng_seed=3)
    assert list(curve.columns) == ["sigma_y", "t", "log10_ratio"]
    assert len(curve) == 200
    tight = curve[curve["sigma_y"] == 0.01]["log10_ratio"].to_numpy()
    loose = curve[curve["sigma_y"] == 1e9]["log10_ratio"].to_numpy()
    assert np.all(tight[: int(0.9 * tight.size)] > 0)
    assert np.all(loose < -3)

    summary = term_ratio_summary(curve).set_index("sigma_y")
    assert summary.loc[0.01, "dominant_fraction"] >= 0.9
    assert summary.loc[1e9, "dominant_fraction"] == 0.0
    assert summary.loc[1e9, "min_dominant_t"] == -1


def test_term_ratio_curve_ve(doublewell):
    curve = term_ratio_curve(doublewell, [1.5, 0.0], [0.05], make_ve_geometric(30), rng_seed=1)
    assert len(curve) == 30
    assert np.all(np.isfinite(curve["log10_ratio"]))
    with pytest.raises(ValueError):
        term_ratio_curve(doublewell, [1.5], [0.05], make_ve_geometric(30))


def test_necessary_conditions_small_run(doublewell):
    diag = posterior_necessary_conditions(
        doublewell, respace(make_vp_linear(1000), 100), 0.5, 100, 10, 0
    )
    row = diag.to_row()
    assert row["n_conditions"] == 100
    assert row["n_samples_per_condition"] == 10
    assert row["sigma_y"] == 0.5
    assert all(np.isfinite(v) for v in row.values())
    assert diag.mse_mmse_ratio > 1.0
    assert diag.residual_std == pytest.approx(0.5, rel=0.25)
    assert abs(diag.pearson_r) < 0.3
    assert 0.0 <= diag.ks_pvalue <= 1.0


def test_necessary_conditions_are_seeded(doublewell):
    schedule = respace(make_vp_linear(1000), 20)
    a = posterior_necessary_conditions(doublewell, schedule, 0.5, 5, 4, 9)
    b = posterior_necessary_conditions(doublewell, schedule, 0.5, 5, 4, 9)
    assert a == b


def test_necessary_conditions_input_checks(doublewell):
    schedule = respace(make_vp_linear(1000), 20)
    with pytest.raises(ValueError):
        posterior_necessary_conditions(doublewell, schedule, 0.5, 5, 1, 0)
    with pytest.raises(ValueError):
        posterior_necessary_conditions(doublewell, schedule, 0.0, 5, 4, 0)
    with pytest.raises(ValueError):
        posterior_necessary_conditions(doublewell, schedule, 0.5, 0, 4, 0)


@pytest.mark.slow
def test_exact_sampler_passes_necessary_conditions(doublewell):
    n_samples = 40
    diag = posterior_necessary_conditions(
        doublewell, respace(make_vp_linear(1000), 250), 0.5, 2000, n_samples, 1
    )
    # One draw against the mean of the other n - 1: 2 / (1 + 1 / (n - 1)).
    assert diag.mse_mmse_ratio == pytest.approx(2.0 / (1.0 + 1.0 / (n_samples - 1)), abs=0.15)
    assert diag.residual_std == pytest.approx(0.5, rel=0.05)
    assert abs(diag.pearson_r) < 0.05
    assert diag.ks_pvalue > 1e-3


@pytest.mark.slow
def test_exact_sampler_necessary_conditions_bimodal():
    diag = posterior_necessary_conditions(
        get_preset("bimodal1d"), respace(make_vp_linear(1000), 250), 0.2, 200, 40, 2
    )
    assert 1.7 <= diag.mse_mmse_ratio <= 2.3
    assert 0.18 <= diag.residual_std <= 0.22
    assert diag.ks_pvalue > 0.01
    assert abs(diag.pearson_r) < 0.05
