"""Configuration models for experiments, priors, schedules and measurements."""

from posterior_lab.models.experiment import (
    ComponentSpec,
    CurvesConfig,
    DiagnoseConfig,
    ExperimentConfig,
    GuidanceConfig,
    MeasurementSpec,
    OperatorSpec,
    PriorSpec,
    ScheduleSpec,
    TaskName,
    UmbrellaConfig,
)

__all__ = [
    "ExperimentConfig",
    "TaskName",
    "PriorSpec",
    "ComponentSpec",
    "ScheduleSpec",
    "OperatorSpec",
    "MeasurementSpec",
    "GuidanceConfig",
    "UmbrellaConfig",
    "DiagnoseConfig",
    "CurvesConfig",
]
