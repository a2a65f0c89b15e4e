"""Distances between spatial locations.

Two metrics are supported: plain Euclidean distance in any dimension, and
great-circle (haversine) distance on a sphere for ``(lat, lon)`` pairs given
in radians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_KM = 6371.0088

EUCLIDEAN = "euclidean"
HAVERSINE = "haversine"


class GeometryError(ValueError):
    """Locations that do not conform to a metric."""

    code = "invalid-geometry"


@dataclass(frozen=True)
class Metric:
    kind: str = EUCLIDEAN
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in (EUCLIDEAN, HAVERSINE):
            raise GeometryError(f"unknown metric kind {self.kind!r}")
        if self.kind == HAVERSINE and not (np.isfinite(self.radius) and self.radius > 0):
            raise GeometryError("haversine radius must be positive")

    @classmethod
    def euclidean(cls) -> "Metric":
        return cls(EUCLIDEAN)

    @classmethod
    def haversine(cls, radius: float = EARTH_RADIUS_KM) -> "Metric":
        return cls(HAVERSINE, float(radius))


@dataclass(frozen=True)
class LocationSet:
    """A set of points, one per row of ``coords``.

    ``angular_unit`` is ``"radians"`` for ``(lat, lon)`` data meant for the
    haversine metric and ``"none"`` otherwise.
    """

    coords: np.ndarray
    angular_unit: str = "none"
    dim: int = field(init=False)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.ndim != 2 or coords.shape[1] < 1:
            raise GeometryError("coords must be a (count, dim) matrix")
        if not np.all(np.isfinite(coords)):
            raise GeometryError("coordinates must be finite")
        if self.angular_unit not in ("none", "radians"):
            raise GeometryError(f"unknown angular unit {self.angular_unit!r}")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "dim", coords.shape[1])

    def __len__(self):
        return self.coords.shape[0]

    def subset(self, idx) -> "LocationSet":
        return LocationSet(self.coords[idx], self.angular_unit)


def _as_points(metric: Metric, pts) -> np.ndarray:
    if isinstance(pts, LocationSet):
        if metric.kind == HAVERSINE and pts.angular_unit != "radians":
            raise GeometryError("haversine requires locations in radians")
        arr = pts.coords
    else:
        arr = np.asarray(pts, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
    if not np.all(np.isfinite(arr)):
        raise GeometryError("coordinates must be finite")
    if metric.kind == HAVERSINE:
        if arr.shape[1] != 2:
            raise GeometryError("haversine requires (lat, lon) pairs")
        if np.any(np.abs(arr[:, 0]) > np.pi / 2 + 1e-12):
            raise GeometryError("latitude outside [-pi/2, pi/2]")
    return arr


def _haversine(a: np.ndarray, b: np.ndarray, radius: float) -> np.ndarray:
    # a: (n, 2), b: (m, 2) -> (n, m)
    lat1, lon1 = a[:, 0:1], a[:, 1:2]
    lat2, lon2 = b[None, :, 0], b[None, :, 1]
    h = (np.sin((lat2 - lat1) / 2.0) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2)
    h = np.clip(h, 0.0, 1.0)
    return 2.0 * radius * np.arcsin(np.sqrt(h))


def _euclidean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def distance(metric: Metric, a, b) -> float:
    """Distance between two single locations."""
    pa = _as_points(metric, a)
    pb = _as_points(metric, b)
    if pa.shape != (1, pb.shape[1]) or pb.shape[0] != 1:
        raise GeometryError("distance expects two points of equal dimension")
    return float(pairwise_distances(metric, pa, pb)[0, 0])


def pairwise_distances(metric: Metric, A, B) -> np.ndarray:
    """Matrix of distances with entry ``(i, j) = d(A[i], B[j])``."""
    a = _as_points(metric, A)
    b = _as_points(metric, B)
    if a.shape[1] != b.shape[1]:
        raise GeometryError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if metric.kind == HAVERSINE:
        return _haversine(a, b, metric.radius)
    return _euclidean(a, b)


def iter_distance_blocks(metric: Metric, A, B, block: int = 1024):
    """Yield ``(start, D)`` row blocks of the distance matrix to bound memory."""
    a = _as_points(metric, A)
    n = a.shape[0]
    for start in range(0, n, block):
        yield start, pairwise_distances(metric, a[start:start + block], B)


def degrees_to_radians(coords) -> np.ndarray:
    arr = np.asarray(coords, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise GeometryError("coordinates must be finite")
    return arr * (np.pi / 180.0)
