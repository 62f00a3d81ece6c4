"""Scalar distributions sampled on planar point sets, and the two target wakes."""
import logging
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.spatial import Delaunay

from wakerom.errors import DimensionError, GeometryMismatchError, SnapshotFormatError

logger = logging.getLogger("wakerom.field")

TWO_PI = 2.0 * np.pi

TargetFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _wrap_angle(theta: np.ndarray) -> np.ndarray:
    theta = np.mod(theta, TWO_PI)
    # np.mod can round tiny negatives up to exactly 2π
    return np.where(theta >= TWO_PI, 0.0, theta)


@dataclass(frozen=True, eq=False)
class PlaneGeometry:
    """Ordered polar point set shared by every field defined on it."""

    r: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        r = _frozen(self.r).ravel()
        theta = _frozen(self.theta).ravel()
        if r.size < 1:
            raise DimensionError("geometry needs at least one point")
        if r.shape != theta.shape:
            raise DimensionError(f"r has {r.size} points, theta has {theta.size}")
        if not (np.all(np.isfinite(r)) and np.all(r >= 0)):
            raise ValueError("radii must be finite and nonnegative")
        if not np.all((theta >= 0) & (theta < TWO_PI)):
            raise ValueError("angles must lie in [0, 2pi)")
        r.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def polar_disc(
        cls, radius: float = 1.0, n_radial: int = 100, n_angular: int = 100
    ) -> "PlaneGeometry":
        """Centre point plus `n_radial` rings of `n_angular` equispaced points."""
        rings = radius * np.arange(1, n_radial + 1) / n_radial
        angles = TWO_PI * np.arange(n_angular) / n_angular
        rr, tt = np.meshgrid(rings, angles, indexing="ij")
        return cls(
            r=np.concatenate([[0.0], rr.ravel()]),
            theta=np.concatenate([[0.0], tt.ravel()]),
        )

    @classmethod
    def from_cartesian(cls, x, y) -> "PlaneGeometry":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return cls(r=np.hypot(x, y), theta=_wrap_angle(np.arctan2(y, x)))

    @property
    def count(self) -> int:
        return self.r.size

    @property
    def x(self) -> np.ndarray:
        return self.r * np.cos(self.theta)

    @property
    def y(self) -> np.ndarray:
        return self.r * np.sin(self.theta)

    def polar(self) -> np.ndarray:
        """(P, 2) array of (r, theta) rows, the network input layout."""
        return np.column_stack([self.r, self.theta])

    def cartesian(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def __eq__(self, other) -> bool:
        if not isinstance(other, PlaneGeometry):
            return NotImplemented
        if self is other:
            return True
        return np.array_equal(self.r, other.r) and np.array_equal(self.theta, other.theta)

    def __hash__(self) -> int:
        return hash((self.count, self.r.tobytes(), self.theta.tobytes()))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Main-direction velocity component sampled at every geometry point."""

    geometry: PlaneGeometry
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values).ravel()
        if values.size != self.geometry.count:
            raise DimensionError(
                f"field has {values.size} values for {self.geometry.count} points"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScalarField):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Pointwise measurements at distinct Cartesian locations."""

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x, y, values = (_frozen(a).ravel() for a in (self.x, self.y, self.values))
        if x.size < 1:
            raise DimensionError("observation set needs at least one sample")
        if not (x.size == y.size == values.size):
            raise DimensionError("observation coordinate and value counts differ")
        if np.unique(np.column_stack([x, y]), axis=0).shape[0] != x.size:
            raise ValueError("observation locations must be distinct")
        for name, arr in (("x", x), ("y", y), ("values", values)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def count(self) -> int:
        return self.x.size


def target_smooth(r):
    """Ringed radial target (sin 4r)^2 - 10."""
    return np.sin(4.0 * np.asarray(r, dtype=float)) ** 2 - 10.0


def target_smooth_xy(x, y):
    return target_smooth(np.hypot(x, y))


def target_pointwise(x, y):
    """sin(pi x) sin((y + 0.2) pi) / 1.2^(e^(x + y))."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.sin(np.pi * x) * np.sin((y + 0.2) * np.pi) / 1.2 ** np.exp(x + y)


def sample_field(geometry: PlaneGeometry, f: TargetFn) -> ScalarField:
    return ScalarField(geometry, f(geometry.x, geometry.y))


def make_observation_grid(side: float, n_per_axis: int, f: TargetFn) -> ObservationSet:
    """Equispaced n_per_axis x n_per_axis samples over [-side/2, side/2]^2."""
    if n_per_axis < 2:
        raise ValueError(f"n_per_axis must be at least 2, got {n_per_axis}")
    axis = np.linspace(-side / 2.0, side / 2.0, n_per_axis)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    x, y = xx.ravel(), yy.ravel()
    return ObservationSet(x=x, y=y, values=f(x, y))


def field_relative_error(
    pred: ScalarField, truth: ScalarField, restriction: sparse.spmatrix | None = None
) -> float:
    """||pred - truth|| / ||truth||, optionally after a linear restriction map."""
    if pred.geometry != truth.geometry:
        raise GeometryMismatchError("prediction and truth live on different geometries")
    return relative_error(pred.values, truth.values, restriction)


def relative_error(pred, truth, restriction: sparse.spmatrix | None = None) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if restriction is not None:
        pred = restriction @ pred
        truth = restriction @ truth
    denom = np.linalg.norm(truth)
    if denom == 0.0:
        raise ValueError("relative error undefined for a zero-norm truth")
    return float(np.linalg.norm(pred - truth) / denom)


def observation_operator(geometry: PlaneGeometry, obs: ObservationSet) -> sparse.csr_matrix:
    """Sparse (n_obs, P) map interpolating a field linearly at the observation points.

    Weights are barycentric coordinates in the Delaunay triangle that contains
    each observation; points outside the convex hull are rejected.
    """
    if geometry.count < 3:
        raise DimensionError("interpolation needs at least three geometry points")
    tri = Delaunay(geometry.cartesian())
    query = np.column_stack([obs.x, obs.y])
    simplex = tri.find_simplex(query)
    if np.any(simplex < 0):
        outside = int(np.sum(simplex < 0))
        raise GeometryMismatchError(f"{outside} observations lie outside the geometry")

    transform = tri.transform[simplex]
    partial = np.einsum("nij,nj->ni", transform[:, :2, :], query - transform[:, 2, :])
    weights = np.column_stack([partial, 1.0 - partial.sum(axis=1)])
    cols = tri.simplices[simplex]
    rows = np.repeat(np.arange(obs.count), 3)
    op = sparse.csr_matrix(
        (weights.ravel(), (rows, cols.ravel())), shape=(obs.count, geometry.count)
    )
    op.sum_duplicates()
    return op


def write_field_csv(field: ScalarField, path: Path) -> None:
    data = np.column_stack([field.geometry.r, field.geometry.theta, field.values])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header="r,theta,value", comments="")


def read_field_csv(path: Path) -> ScalarField:
    data = _read_table(path, "r,theta,value")
    if data.shape[1] != 3:
        raise SnapshotFormatError(f"{path}: expected 3 columns, found {data.shape[1]}")
    return ScalarField(PlaneGeometry(r=data[:, 0], theta=data[:, 1]), data[:, 2])


def write_observations_csv(obs: ObservationSet, path: Path) -> None:
    data = np.column_stack([obs.x, obs.y, obs.values])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header="x,y,value", comments="")


def read_observations_csv(path: Path) -> ObservationSet:
    data = _read_table(path, "x,y,value")
    if data.shape[1] != 3:
        raise SnapshotFormatError(f"{path}: expected 3 columns, found {data.shape[1]}")
    return ObservationSet(x=data[:, 0], y=data[:, 1], values=data[:, 2])


def _read_table(path: Path, header: str) -> np.ndarray:
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            first = fh.readline().strip()
            if first != header:
                raise SnapshotFormatError(f"{path}: expected header '{header}', got '{first}'")
            return np.loadtxt(fh, delimiter=",", ndmin=2)
    except (OSError, ValueError) as e:
        raise SnapshotFormatError(f"{path}: {e}") from e
