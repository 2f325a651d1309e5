"""Diagonal linear measurement operators and the forward model y = A x0 + sigma_y * eta."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
Seed = int | Sequence[int]

OperatorKind = Literal["identity", "mask", "diagonal"]


@dataclass(frozen=True, eq=False)
class LinearOperator:
    """Structural diagonal operator. `values` is the mask or the diagonal; identity has none."""

    kind: OperatorKind
    dim: int
    values: FloatArray | None = None

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"operator dim must be >= 1, got {self.dim}")
        if self.kind == "identity":
            object.__setattr__(self, "values", None)
            return
        if self.values is None:
            raise ValueError(f"{self.kind} operator needs values")
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.dim,):
            raise ValueError(f"{self.kind} operator needs {self.dim} values, got shape {values.shape}")
        if self.kind == "mask":
            if not np.all((values == 0) | (values == 1)):
                raise ValueError("mask entries must be 0 or 1")
        elif self.kind == "diagonal":
            if not np.all(np.isfinite(values)) or np.any(values == 0):
                raise ValueError("diagonal entries must be finite and nonzero")
        else:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        object.__setattr__(self, "values", values)

    @classmethod
    def identity(cls, dim: int) -> LinearOperator:
        return cls("identity", dim)

    @classmethod
    def mask(cls, m: ArrayLike) -> LinearOperator:
        m = np.asarray(m, dtype=np.float64)
        return cls("mask", int(m.size), m)

    @classmethod
    def diagonal(cls, d: ArrayLike) -> LinearOperator:
        d = np.asarray(d, dtype=np.float64)
        return cls("diagonal", int(d.size), d)

    @property
    def diag(self) -> FloatArray:
        """Diagonal of A (ones for identity)."""
        if self.values is None:
            return np.ones(self.dim)
        return self.values

    @property
    def observed(self) -> NDArray[np.bool_]:
        return self.diag != 0

    @property
    def observed_count(self) -> int:
        return int(self.observed.sum())

    def apply(self, x: ArrayLike) -> FloatArray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"operator dim {self.dim} does not match vector length {x.shape[-1]}")
        return x if self.values is None else x * self.values

    def apply_transpose(self, x: ArrayLike) -> FloatArray:
        return self.apply(x)

    def dense(self) -> FloatArray:
        return np.diag(self.diag)

    def to_dict(self) -> dict[str, object]:
        out: dict[str, object] = {"kind": self.kind, "dim": self.dim}
        if self.values is not None:
            out["values"] = self.values.tolist()
        return out


@dataclass(frozen=True, eq=False)
class Measurement:
    """Observation y (one row per trajectory when 2-D), operator and noise level.

    Masked coordinates of y are stored as exact zeros.
    """

    y: FloatArray
    op: LinearOperator
    sigma_y: float

    def __post_init__(self) -> None:
        y = np.array(self.y, dtype=np.float64)
        if y.ndim not in (1, 2) or y.shape[-1] != self.op.dim:
            raise ValueError(f"y must have trailing length {self.op.dim}, got shape {y.shape}")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite values")
        if not (np.isfinite(self.sigma_y) and self.sigma_y >= 0):
            raise ValueError(f"sigma_y must be >= 0, got {self.sigma_y}")
        if self.op.kind == "mask":
            y = y * self.op.diag
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma_y", float(self.sigma_y))

    @property
    def dim(self) -> int:
        return self.op.dim

    @property
    def is_batched(self) -> bool:
        return self.y.ndim == 2

    def take(self, rows: ArrayLike) -> Measurement:
        """Rows of a batched measurement; unbatched measurements are shared by every row."""
        if not self.is_batched:
            return self
        return replace(self, y=self.y[np.asarray(rows)])

    def residual(self, x0: ArrayLike) -> FloatArray:
        """y - A x0."""
        return self.y - self.op.apply(x0)


def forward_model(
    x0: ArrayLike, op: LinearOperator, sigma_y: float, rng_seed: Seed
) -> Measurement:
    """y = A x0 + sigma_y * eta; noise only on observed coordinates of a mask."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape[-1] != op.dim:
        raise ValueError(f"x0 length {x0.shape[-1]} does not match operator dim {op.dim}")
    if sigma_y < 0:
        raise ValueError(f"sigma_y must be >= 0, got {sigma_y}")
    rng = np.random.default_rng(rng_seed)
    eta = rng.standard_normal(x0.shape)
    return Measurement(y=op.apply(x0) + sigma_y * eta, op=op, sigma_y=sigma_y)
