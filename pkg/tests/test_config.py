import json
import logging
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from posterior_lab.config import get_settings
from posterior_lab.errors import ConfigError, NumericalError, PosteriorLabError, WhamError
from posterior_lab.logging_utils import _JsonFormatter, _TextFormatter, configure_logging, log_context
from posterior_lab.models import (
    CurvesConfig,
    ExperimentConfig,
    OperatorSpec,
    PriorSpec,
    ScheduleSpec,
    UmbrellaConfig,
)


def test_settings_defaults_and_env(monkeypatch):
    settings = get_settings()
    assert settings.jobs == 1
    assert settings.batch_chunk_size == 2048
    assert settings.wham_tol == 1e-8
    monkeypatch.setenv("POSTERIOR_LAB_JOBS", "4")
    monkeypatch.setenv("POSTERIOR_LAB_WHAM_MAX_ITER", "50")
    settings = get_settings()
    assert (settings.jobs, settings.wham_max_iter) == (4, 50)
    monkeypatch.setenv("POSTERIOR_LAB_JOBS", "0")
    with pytest.raises(ValidationError):
        get_settings()


def test_settings_output_path(monkeypatch, tmp_path):
    assert get_settings().output_path == tmp_path / "runs"
    monkeypatch.setenv("POSTERIOR_LAB_OUTPUT_DIR", "relative/out")
    assert get_settings().output_path == Path.cwd() / "relative/out"


def test_error_hierarchy():
    err = ConfigError("bad", field="measurement.sigma_y")
    assert isinstance(err, ValueError) and isinstance(err, PosteriorLabError)
    assert err.field == "measurement.sigma_y"
    wham_err = WhamError("split", groups=[[0], [1]])
    assert isinstance(wham_err, NumericalError) and isinstance(wham_err, ArithmeticError)
    assert wham_err.module == "umbrella"
    assert wham_err.groups == [[0], [1]]


def test_configure_logging_is_idempotent(monkeypatch):
    root = logging.getLogger()
    monkeypatch.setattr(root, "handlers", [])
    monkeypatch.setattr(root, "level", root.level)
    configure_logging(level="debug", json_logs=True)
    configure_logging(level="error")
    assert len(root.handlers) == 1
    assert isinstance(root.handlers[0].formatter, _JsonFormatter)
    assert root.level == logging.DEBUG


def test_json_formatter():
    record = logging.LogRecord("posterior_lab.sampler", logging.INFO, __file__, 1, "step %d", (3,), None)
    payload = json.loads(_JsonFormatter().format(record))
    assert payload["msg"] == "step 3"
    assert payload["level"] == "INFO"
    assert payload["logger"] == "posterior_lab.sampler"


def test_formatters_render_run_context():
    context = log_context(module="sampler", step=12, kind="numerical", field=None)
    record = logging.makeLogRecord(
        {"name": "posterior_lab.sampler", "levelname": "WARNING", "msg": "non-finite", **context}
    )
    payload = json.loads(_JsonFormatter().format(record))
    assert (payload["module"], payload["step"], payload["kind"]) == ("sampler", 12, "numerical")
    assert "field" not in payload
    line = _TextFormatter(fmt="%(levelname)s | %(message)s").format(record)
    assert line == "WARNING | non-finite [module=sampler step=12 kind=numerical]"
    plain = logging.makeLogRecord({"levelname": "INFO", "msg": "done"})
    assert _TextFormatter(fmt="%(message)s").format(plain) == "done"


def test_experiment_defaults():
    config = ExperimentConfig()
    assert config.task == "sample"
    assert config.prior.preset == "doublewell2d"
    assert config.schedule.process == "vp"
    assert config.schedule.steps == 1000
    assert config.guidance.method == "exact"
    assert ExperimentConfig(task="umbrella").schedule.process == "ve"
    assert ExperimentConfig(task="umbrella", schedule={"process": "vp"}).schedule.process == "vp"


def test_experiment_cross_field_checks():
    cases = [
        ({"measurement": {"y": [1.0, 2.0, 3.0]}}, ("measurement",), "y has 3 values"),
        ({"measurement": {"operator": {"kind": "mask", "values": [1.0]}}}, ("measurement",), "operator"),
        ({"task": "diagnose", "measurement": {"sigma_y": 0.0}}, ("measurement",), "diagnose"),
        ({"umbrella": {"axis": 2}}, ("umbrella",), "axis"),
        ({"measurement": {"sigma_y": -1.0}}, ("measurement", "sigma_y"), "greater than"),
    ]
    for payload, loc, text in cases:
        with pytest.raises(ValidationError) as info:
            ExperimentConfig(**payload)
        error = info.value.errors()[0]
        assert error["loc"] == loc
        assert text in error["msg"]
    # A broken prior reports only the prior, not a follow-on dimension error.
    with pytest.raises(ValidationError) as info:
        ExperimentConfig(prior={"preset": "nope"}, measurement={"y": [1.0]})
    assert [e["loc"][0] for e in info.value.errors()] == ["prior"]


def test_prior_spec():
    spec = PriorSpec(components=[{"weight": 0.25, "mean": [0.0, 1.0], "var": [1.0, 2.0]},
                                 {"weight": 0.75, "mean": [1.0, 0.0], "var": [0.5, 0.5]}])
    gmm = spec.to_mixture()
    assert (gmm.dim, gmm.n_components, spec.dim) == (2, 2, 2)
    np.testing.assert_array_equal(gmm.weights, [0.25, 0.75])
    with pytest.raises(ValidationError):
        PriorSpec(preset="gauss1d", components=[{"weight": 1.0, "mean": [0.0], "var": [1.0]}])
    with pytest.raises(ValidationError, match="unknown preset"):
        PriorSpec(preset="nope")
    with pytest.raises(ValidationError):
        PriorSpec(components=[{"weight": 1.0, "mean": [0.0], "var": [0.0]}])
    with pytest.raises(ValidationError, match="sum to 1"):
        PriorSpec(components=[{"weight": 0.5, "mean": [0.0], "var": [1.0]}])


def test_operator_spec():
    assert OperatorSpec().to_operator(3).kind == "identity"
    mask = OperatorSpec(kind="mask", values=[1, 0]).to_operator(2)
    np.testing.assert_array_equal(mask.diag, [1.0, 0.0])
    with pytest.raises(ValidationError):
        OperatorSpec(kind="mask", values=[0.5, 1.0])
    with pytest.raises(ValidationError):
        OperatorSpec(kind="diagonal", values=[0.0])
    with pytest.raises(ValidationError):
        OperatorSpec(kind="diagonal")
    with pytest.raises(ValueError):
        OperatorSpec(kind="diagonal", values=[2.0]).to_operator(2)


def test_schedule_and_curves_ranges():
    with pytest.raises(ValidationError):
        ScheduleSpec(beta_min=0.02, beta_max=0.01)
    with pytest.raises(ValidationError):
        ScheduleSpec(steps=1)
    with pytest.raises(ValidationError):
        CurvesConfig(sigma_y_list=[0.1, -0.1])


def test_umbrella_window_layout():
    uc = UmbrellaConfig()
    assert len(uc.window_centers("exact")) == 15
    dps = uc.window_centers("dps")
    assert len(dps) == 30
    assert (dps[0], dps[-1]) == pytest.approx((-3.5, 3.0))
    assert len(uc.bin_edges()) == 61
    explicit = UmbrellaConfig(centers=[-1.0, 0.0, 2.0])
    assert explicit.window_centers("exact") == [-1.0, 0.0, 2.0]
    assert explicit.window_centers("dps") == pytest.approx(np.linspace(-1.0, 2.0, 30).tolist())
    with pytest.raises(ValidationError):
        UmbrellaConfig(centers=[0.0, 0.0])
    with pytest.raises(ValidationError):
        UmbrellaConfig(windows_per_method={"dps": 1})
