"""Shared fixtures: small polar geometries and synthetic snapshot families."""

import numpy as np
import pytest

from wakerom.field import PlaneGeometry
from wakerom.fullorder import SnapshotSet


@pytest.fixture
def small_disc() -> PlaneGeometry:
    # 1 + 4 * 8 = 33 points
    return PlaneGeometry.polar_disc(1.0, 4, 8)


@pytest.fixture
def make_low_rank():
    """Factory for snapshot sets whose wakes span exactly `rank` directions."""

    def make(geometry: PlaneGeometry, M: int, rank: int, p: int = 3, seed: int = 0) -> SnapshotSet:
        rng = np.random.default_rng(seed)
        basis = rng.normal(size=(geometry.count, rank))
        coeffs = rng.normal(size=(rank, M))
        params = rng.uniform(-0.5, 0.5, size=(M, p))
        return SnapshotSet(params, basis @ coeffs, geometry)

    return make


@pytest.fixture
def make_linear_family():
    """Factory for wakes that depend linearly on mu: v(mu) = B mu + c."""

    def make(geometry: PlaneGeometry, M: int, p: int = 3, seed: int = 0) -> SnapshotSet:
        rng = np.random.default_rng(seed)
        B = rng.normal(size=(geometry.count, p))
        c = rng.normal(size=geometry.count)
        params = rng.uniform(-0.5, 0.5, size=(M, p))
        return SnapshotSet(params, B @ params.T + c[:, None], geometry)

    return make
