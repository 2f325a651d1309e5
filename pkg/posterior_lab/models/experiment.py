"""Pydantic models for experiment configuration files."""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, ValidationInfo, field_validator, model_validator

from posterior_lab.gmm import PRESETS, GaussianMixture, get_preset
from posterior_lab.operators import LinearOperator

TaskName = Literal["sample", "umbrella", "diagnose", "curves"]
MethodName = Literal["exact", "dps", "dpsw", "none"]


class ComponentSpec(BaseModel):
    """One diagonal Gaussian component."""

    weight: float = Field(..., gt=0.0)
    mean: list[float] = Field(..., min_length=1)
    var: list[float] = Field(..., min_length=1, description="Per-coordinate variances (> 0)")

    @field_validator("var")
    @classmethod
    def _positive(cls, v: list[float]) -> list[float]:
        if any(x <= 0 for x in v):
            raise ValueError("variances must be > 0")
        return v


class PriorSpec(BaseModel):
    """Built-in preset, or an explicit mixture in the GMM file layout."""

    preset: str | None = Field(default=None, description=f"One of {sorted(PRESETS)}")
    dim: int | None = Field(default=None, ge=1)
    components: list[ComponentSpec] | None = None

    @model_validator(mode="after")
    def _check(self) -> PriorSpec:
        if self.components is None:
            if self.preset is None:
                self.preset = "doublewell2d"
            if self.preset not in PRESETS:
                raise ValueError(f"unknown preset {self.preset!r}; known: {sorted(PRESETS)}")
            return self
        if self.preset is not None:
            raise ValueError("give either preset or components, not both")
        dim = self.dim if self.dim is not None else len(self.components[0].mean)
        for c in self.components:
            if len(c.mean) != dim or len(c.var) != dim:
                raise ValueError(f"every component mean and var must have length dim={dim}")
        self.dim = dim
        self.to_mixture()
        return self

    def to_mixture(self) -> GaussianMixture:
        if self.components is None:
            assert self.preset is not None
            return get_preset(self.preset)
        return GaussianMixture.from_components([c.model_dump() for c in self.components])


class ScheduleSpec(BaseModel):
    process: Literal["vp", "ve"] = "vp"
    steps: int = Field(default=1000, ge=2)
    base_steps: int = Field(
        default=1000, ge=2, description="Levels of the base schedule that `steps` is respaced from"
    )
    beta_min: float = Field(default=1e-4, gt=0.0, lt=1.0)
    beta_max: float = Field(default=0.02, gt=0.0, lt=1.0)
    sigma_min: float = Field(default=0.01, gt=0.0)
    sigma_max: float = Field(default=50.0, gt=0.0)

    @model_validator(mode="after")
    def _ranges(self) -> ScheduleSpec:
        if self.beta_min >= self.beta_max:
            raise ValueError("beta_min must be < beta_max")
        if self.sigma_min >= self.sigma_max:
            raise ValueError("sigma_min must be < sigma_max")
        return self


class OperatorSpec(BaseModel):
    kind: Literal["identity", "mask", "diagonal"] = "identity"
    values: list[float] | None = None

    @model_validator(mode="after")
    def _values(self) -> OperatorSpec:
        if self.kind == "identity":
            return self
        if not self.values:
            raise ValueError(f"{self.kind} operator needs values")
        if self.kind == "mask" and any(v not in (0.0, 1.0) for v in self.values):
            raise ValueError("mask values must be 0 or 1")
        if self.kind == "diagonal" and any(v == 0 for v in self.values):
            raise ValueError("diagonal values must be nonzero")
        return self

    def to_operator(self, dim: int) -> LinearOperator:
        if self.kind == "identity":
            return LinearOperator.identity(dim)
        assert self.values is not None
        if len(self.values) != dim:
            raise ValueError(f"operator has {len(self.values)} values, prior dim is {dim}")
        values = np.asarray(self.values, dtype=np.float64)
        return LinearOperator.mask(values) if self.kind == "mask" else LinearOperator.diagonal(values)


class MeasurementSpec(BaseModel):
    """Observation: a fixed y, or one synthesized from a prior draw with `synthesize_seed`."""

    operator: OperatorSpec = Field(default_factory=OperatorSpec)
    sigma_y: float = Field(default=0.05, ge=0.0)
    y: list[float] | None = None
    synthesize_seed: int | None = Field(default=None, ge=0)


class GuidanceConfig(BaseModel):
    method: MethodName = "exact"
    zeta_prime: float = Field(default=1.0, ge=0.0)
    zeta_mode: Literal["constant", "residual_norm"] = "constant"
    enhanced: bool = False
    parity_tau: bool = Field(default=False, description="Snap VP exact scores to a discrete level")


class UmbrellaConfig(BaseModel):
    """Window layout and WHAM binning for the free-energy experiment."""

    centers: list[float] | None = Field(default=None, description="Explicit centers (overrides range)")
    n_windows: int = Field(default=15, ge=2)
    center_min: float = -3.5
    center_max: float = 3.0
    sigma_y: float = Field(default=0.35, gt=0.0)
    samples_per_window: int = Field(default=2000, ge=10)
    axis: int = Field(default=0, ge=0)
    bins: int = Field(default=60, ge=2)
    bin_min: float = -4.0
    bin_max: float = 3.5
    min_count: int = Field(default=50, ge=1, description="Bins compared against the truth need this many samples")
    methods: list[MethodName] = Field(default_factory=lambda: ["exact", "dpsw", "dps"])
    windows_per_method: dict[str, int] = Field(default_factory=lambda: {"dps": 30})

    @model_validator(mode="after")
    def _check(self) -> UmbrellaConfig:
        if self.centers is not None:
            if len(self.centers) < 1 or np.any(np.diff(self.centers) <= 0):
                raise ValueError("centers must be strictly increasing")
        elif self.center_min >= self.center_max:
            raise ValueError("center_min must be < center_max")
        if self.bin_min >= self.bin_max:
            raise ValueError("bin_min must be < bin_max")
        if any(n < 2 for n in self.windows_per_method.values()):
            raise ValueError("windows_per_method counts must be >= 2")
        return self

    def window_centers(self, method: str | None = None) -> list[float]:
        if self.centers is not None and (method is None or method not in self.windows_per_method):
            return list(self.centers)
        count = self.windows_per_method.get(method or "", self.n_windows)
        lo = self.centers[0] if self.centers is not None else self.center_min
        hi = self.centers[-1] if self.centers is not None else self.center_max
        return np.linspace(lo, hi, count).tolist()

    def bin_edges(self) -> list[float]:
        return np.linspace(self.bin_min, self.bin_max, self.bins + 1).tolist()


class DiagnoseConfig(BaseModel):
    n_conditions: int = Field(default=200, ge=1)
    n_samples: int = Field(default=40, ge=10)


class CurvesConfig(BaseModel):
    sigma_y_list: list[float] = Field(default_factory=lambda: [0.01, 0.05, 0.2], min_length=1)
    y: list[float] | None = Field(default=None, description="Observation for the curves (default: synthesized from a prior draw)")

    @field_validator("sigma_y_list")
    @classmethod
    def _positive(cls, v: list[float]) -> list[float]:
        if any(s <= 0 for s in v):
            raise ValueError("sigma_y values must be > 0")
        return v


class ExperimentConfig(BaseModel):
    """One run: what to sample, how, and where outputs go."""

    task: TaskName = "sample"
    prior: PriorSpec = Field(default_factory=PriorSpec)
    schedule: ScheduleSpec | None = Field(default=None, description="Default: VE for umbrella, VP otherwise")
    guidance: GuidanceConfig = Field(default_factory=GuidanceConfig)
    measurement: MeasurementSpec = Field(default_factory=MeasurementSpec)
    output_dir: Path | None = None
    master_seed: int = Field(default=0, ge=0)
    trajectories: int = Field(default=1000, ge=1)
    record_steps: bool = False
    jobs: int | None = Field(default=None, ge=1, le=64)
    umbrella: UmbrellaConfig = Field(default_factory=UmbrellaConfig)
    diagnose: DiagnoseConfig = Field(default_factory=DiagnoseConfig)
    curves: CurvesConfig = Field(default_factory=CurvesConfig)

    @field_validator("measurement")
    @classmethod
    def _measurement_fits_prior(cls, v: MeasurementSpec, info: ValidationInfo) -> MeasurementSpec:
        dim = _prior_dim(info)
        if dim is not None:
            if v.operator.values is not None and len(v.operator.values) != dim:
                raise ValueError(f"operator has {len(v.operator.values)} values, prior dim is {dim}")
            if v.y is not None and len(v.y) != dim:
                raise ValueError(f"y has {len(v.y)} values, prior dim is {dim}")
        if info.data.get("task") == "diagnose" and v.sigma_y <= 0:
            raise ValueError("sigma_y must be > 0 for the diagnose task")
        return v

    @field_validator("umbrella")
    @classmethod
    def _axis_in_range(cls, v: UmbrellaConfig, info: ValidationInfo) -> UmbrellaConfig:
        dim = _prior_dim(info)
        if dim is not None and v.axis >= dim:
            raise ValueError(f"axis {v.axis} out of range for dim {dim}")
        return v

    @model_validator(mode="after")
    def _default_schedule(self) -> ExperimentConfig:
        if self.schedule is None:
            self.schedule = ScheduleSpec(process="ve" if self.task == "umbrella" else "vp")
        return self


def _prior_dim(info: ValidationInfo) -> int | None:
    """Dimension of the already-validated prior; None when the prior itself failed."""
    prior = info.data.get("prior")
    return prior.to_mixture().dim if prior is not None else None
