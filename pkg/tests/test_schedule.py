import numpy as np
import pytest

from posterior_lab.models.experiment import ScheduleSpec
from posterior_lab.schedule import (
    NoiseSchedule,
    alphabar_from_sigma,
    build_schedule,
    make_ve_geometric,
    make_vp_linear,
    nearest_step,
    respace,
    tilde_cov_inpaint,
    tilde_params,
    tilde_params_vp,
    vp_to_ve_sigma,
)


def test_vp_linear():
    s = make_vp_linear(1000)
    assert s.n_steps == 1000
    assert s.betas[0] == pytest.approx(1e-4)
    assert s.betas[-1] == pytest.approx(0.02)
    np.testing.assert_allclose(s.alphabars, np.cumprod(1.0 - s.betas), rtol=0, atol=1e-15)
    assert np.all(np.diff(s.alphabars) < 0)
    assert s.alphabar(1) == pytest.approx(1.0 - 1e-4)


def test_ve_geometric():
    s = make_ve_geometric(200, 0.01, 50.0)
    assert s.sigma(1) == pytest.approx(0.01)
    assert s.sigma(200) == pytest.approx(50.0)
    ratios = s.sigmas[1:] / s.sigmas[:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-10)
    with pytest.raises(ValueError):
        s.alphabar(1)


def test_level_range_is_checked():
    s = make_vp_linear(10)
    with pytest.raises(ValueError):
        s.sigma(0)
    with pytest.raises(ValueError):
        s.sigma(11)


def test_schedule_validation():
    with pytest.raises(ValueError, match="increasing"):
        NoiseSchedule("ve", sigmas=np.array([1.0, 0.5]))
    betas = np.array([0.1, 0.2])
    with pytest.raises(ValueError, match="cumulative"):
        NoiseSchedule("vp", alphabars=np.array([0.9, 0.7]), betas=betas)
    with pytest.raises(ValueError):
        NoiseSchedule("vp", alphabars=np.array([0.0, 0.0]), betas=np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        make_vp_linear(1)


@pytest.mark.parametrize("steps", [2, 50, 333, 999])
def test_respace_vp_keeps_endpoints_and_product_identity(steps):
    base = make_vp_linear(1000)
    s = respace(base, steps)
    assert s.n_steps == steps
    assert s.alphabars[0] == pytest.approx(base.alphabars[0], rel=1e-12)
    assert s.alphabars[-1] == pytest.approx(base.alphabars[-1], rel=1e-10)
    np.testing.assert_allclose(np.cumprod(1.0 - s.betas), s.alphabars, rtol=0, atol=1e-12)
    assert np.all((s.betas > 0) & (s.betas < 1))


def test_respace_ve_is_a_subset():
    base = make_ve_geometric(1000)
    s = respace(base, 100)
    assert s.n_steps == 100
    assert np.isin(s.sigmas, base.sigmas).all()
    assert respace(base, 1000) is base
    with pytest.raises(ValueError):
        respace(base, 1001)


def test_build_schedule_from_spec():
    s = build_schedule(ScheduleSpec(process="vp", steps=50))
    assert (s.kind, s.n_steps) == ("vp", 50)
    ve = build_schedule(ScheduleSpec(process="ve", steps=40, base_steps=20))
    assert (ve.kind, ve.n_steps) == ("ve", 40)
    assert ve.sigma(40) == pytest.approx(50.0)


def test_sigma_alphabar_conversions():
    s = make_vp_linear(100)
    for t in (1, 50, 100):
        sigma = vp_to_ve_sigma(s, t)
        assert sigma == pytest.approx(s.sigma(t))
        assert alphabar_from_sigma(sigma) == pytest.approx(s.alphabar(t), rel=1e-12)
    assert nearest_step(s, s.alphabar(37) + 1e-9) == 37
    assert nearest_step(s, 2.0) == 1
    assert nearest_step(s, 0.0) == 100


def test_tilde_params():
    y = np.array([1.0, -2.0])
    x = np.array([0.5, 3.0])
    tp = tilde_params(y, x, sigma_y=0.5, sigma_t=2.0)
    assert tp.sigma_tilde_sq == pytest.approx(1.0 / (1.0 / 0.25 + 1.0 / 4.0))
    np.testing.assert_allclose(tp.x_tilde, tp.sigma_tilde_sq * (y / 0.25 + x / 4.0))
    assert tp.guidance_var == pytest.approx(4.25)
    assert tp.prior_coef == pytest.approx(tp.sigma_tilde_sq / 4.0)
    with pytest.raises(ValueError):
        tilde_params(y, x, sigma_y=0.0, sigma_t=1.0)
    with pytest.raises(ValueError):
        tilde_params(y, x[:1], sigma_y=0.1, sigma_t=1.0)


def test_tilde_params_vp_maps_to_ve_coordinates():
    y = np.array([0.3])
    x = np.array([-0.7])
    ab = 0.64
    vp = tilde_params_vp(y, x, 0.2, ab)
    ve = tilde_params(y, x / 0.8, 0.2, np.sqrt(0.36 / 0.64))
    assert vp.sigma_tilde_sq == pytest.approx(ve.sigma_tilde_sq)
    np.testing.assert_allclose(vp.x_tilde, ve.x_tilde)


def test_tilde_cov_inpaint():
    cov = tilde_cov_inpaint([1, 0], sigma_y=0.0, sigma_t=2.0)
    np.testing.assert_array_equal(cov.as_diagonal(2), [0.0, 4.0])
    cov = tilde_cov_inpaint([1, 0], sigma_y=1.0, sigma_t=1.0)
    np.testing.assert_allclose(cov.as_diagonal(2), [0.5, 1.0])
    empty = tilde_cov_inpaint([0, 0], sigma_y=1.0, sigma_t=3.0)
    assert empty.kind == "isotropic"
    assert float(empty.values) == pytest.approx(9.0)
    with pytest.raises(ValueError):
        tilde_cov_inpaint([0.5, 1.0], 0.1, 1.0)
