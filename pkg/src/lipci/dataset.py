"""In-memory data model for source and target data."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import LocationSet

# X*^T X* counts as singular below this fraction of its largest eigenvalue.
SINGULAR_RTOL = 1e-10


class DatasetError(ValueError):
    code = "invalid-dataset"


class SingularDesignError(DatasetError):
    code = "singular-design"


def _matrix(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DatasetError(f"{name} must be a matrix")
    if not np.all(np.isfinite(arr)):
        raise DatasetError(f"{name} has non-finite entries")
    return arr


def _locations(locs) -> LocationSet:
    return locs if isinstance(locs, LocationSet) else LocationSet(locs)


@dataclass(frozen=True)
class SourceDataset:
    locations: LocationSet
    covariates: np.ndarray
    responses: np.ndarray
    intercept_included: bool = False

    def __post_init__(self):
        locs = _locations(self.locations)
        X = _matrix(self.covariates, "covariates")
        y = np.asarray(self.responses, dtype=float).ravel()
        if not np.all(np.isfinite(y)):
            raise DatasetError("responses have non-finite entries")
        n = len(locs)
        if n < 1 or X.shape[1] < 1:
            raise DatasetError("need N >= 1 and P >= 1")
        if X.shape[0] != n or y.shape[0] != n:
            raise DatasetError(
                f"row counts disagree: locations {n}, covariates {X.shape[0]}, responses {y.shape[0]}")
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "responses", y)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def subset(self, idx) -> "SourceDataset":
        idx = np.asarray(idx)
        return SourceDataset(self.locations.subset(idx), self.covariates[idx],
                             self.responses[idx], self.intercept_included)


@dataclass(frozen=True)
class TargetSet:
    locations: LocationSet
    covariates: np.ndarray
    intercept_included: bool = False

    def __post_init__(self):
        locs = _locations(self.locations)
        X = _matrix(self.covariates, "target covariates")
        if X.shape[0] != len(locs) or X.shape[0] < 1:
            raise DatasetError("target locations and covariates must have matching, nonzero row counts")
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "covariates", X)

    @property
    def m(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class GroundTruth:
    """Known conditional mean and noise level, for simulations only."""

    f: Callable[[np.ndarray], np.ndarray]
    sigma2: float
    lipschitz_L0: float

    def mean_at(self, locations) -> np.ndarray:
        coords = locations.coords if isinstance(locations, LocationSet) else np.asarray(locations)
        return np.asarray(self.f(coords), dtype=float)


def with_intercept(X) -> np.ndarray:
    """Prepend a column of ones; the intercept becomes coefficient 0."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] == 0:
        raise DatasetError("with_intercept needs at least one covariate column")
    if not np.all(np.isfinite(X)):
        raise DatasetError("covariates have non-finite entries")
    return np.hstack([np.ones((X.shape[0], 1)), X])


def gram_eigen_range(X) -> tuple[float, float]:
    """Smallest and largest eigenvalue of ``X^T X``."""
    ev = np.linalg.eigvalsh(np.asarray(X, dtype=float).T @ np.asarray(X, dtype=float))
    return float(ev[0]), float(ev[-1])


def check_invertible(X, what: str = "X*^T X*") -> None:
    lo, hi = gram_eigen_range(X)
    if not hi > 0 or lo <= SINGULAR_RTOL * hi:
        raise SingularDesignError(f"{what} is singular (eigenvalues {lo:.3g} .. {hi:.3g})")


@dataclass
class ValidationReport:
    findings: list[str] = field(default_factory=list)
    min_eigenvalue: float | None = None
    max_eigenvalue: float | None = None
    duplicate_source_locations: int = 0

    @property
    def ok(self) -> bool:
        return not self.findings


def validate(source: SourceDataset, target: TargetSet) -> ValidationReport:
    """Report problems with a source/target pair; never raises, never mutates."""
    report = ValidationReport()
    if source.p != target.p:
        report.findings.append(
            f"dimension-mismatch: source has P={source.p}, target has P={target.p}")
    if source.locations.dim != target.locations.dim:
        report.findings.append(
            f"location-dimension-mismatch: {source.locations.dim} vs {target.locations.dim}")
    if source.locations.angular_unit != target.locations.angular_unit:
        report.findings.append("angular-unit-mismatch between source and target locations")
    for name, arr in (("source covariates", source.covariates),
                      ("source responses", source.responses),
                      ("target covariates", target.covariates)):
        if not np.all(np.isfinite(arr)):
            report.findings.append(f"non-finite entries in {name}")

    _, counts = np.unique(source.locations.coords, axis=0, return_counts=True)
    report.duplicate_source_locations = int(np.sum(counts[counts > 1] - 1))
    if report.duplicate_source_locations:
        report.findings.append(
            f"duplicate-source-locations: {report.duplicate_source_locations} repeated rows")

    lo, hi = gram_eigen_range(target.covariates)
    report.min_eigenvalue, report.max_eigenvalue = lo, hi
    if not hi > 0 or lo <= SINGULAR_RTOL * hi:
        report.findings.append(f"singular-target-design: min eigenvalue {lo:.3g} (max {hi:.3g})")
    return report


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for a named component under a single seed."""
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))
