import numpy as np
import pytest

from wakerom.errors import DimensionError, GeometryMismatchError, SnapshotFormatError
from wakerom.field import (
    ObservationSet,
    PlaneGeometry,
    ScalarField,
    field_relative_error,
    make_observation_grid,
    observation_operator,
    read_field_csv,
    read_observations_csv,
    sample_field,
    target_pointwise,
    target_smooth,
    target_smooth_xy,
    write_field_csv,
    write_observations_csv,
)


class TestPlaneGeometry:
    def test_polar_disc_layout(self):
        g = PlaneGeometry.polar_disc(2.0, 3, 5)
        assert g.count == 1 + 3 * 5
        assert g.r[0] == 0.0 and g.theta[0] == 0.0
        assert g.r.max() == pytest.approx(2.0)
        assert np.all(g.theta < 2 * np.pi)

    def test_default_disc_has_10001_points(self):
        assert PlaneGeometry.polar_disc(1.0, 100, 100).count == 10001

    def test_from_cartesian_recovers_points(self):
        x = np.array([1.0, 0.0, -1.0, 0.5])
        y = np.array([0.0, -2.0, 0.0, 0.5])
        g = PlaneGeometry.from_cartesian(x, y)
        np.testing.assert_allclose(g.x, x, atol=1e-15)
        np.testing.assert_allclose(g.y, y, atol=1e-15)
        assert g.theta[1] == pytest.approx(1.5 * np.pi)

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(DimensionError):
            PlaneGeometry(r=[0.0, 1.0], theta=[0.0])

    def test_rejects_angle_outside_range(self):
        with pytest.raises(ValueError):
            PlaneGeometry(r=[1.0], theta=[2 * np.pi])

    def test_equality_is_pointwise(self, small_disc):
        same = PlaneGeometry(r=small_disc.r.copy(), theta=small_disc.theta.copy())
        assert same == small_disc
        assert PlaneGeometry.polar_disc(1.0, 4, 7) != small_disc

    def test_arrays_are_read_only(self, small_disc):
        with pytest.raises(ValueError):
            small_disc.r[0] = 5.0


class TestScalarField:
    def test_size_must_match_geometry(self, small_disc):
        with pytest.raises(DimensionError):
            ScalarField(small_disc, np.zeros(small_disc.count + 1))

    def test_values_must_be_finite(self, small_disc):
        values = np.zeros(small_disc.count)
        values[3] = np.nan
        with pytest.raises(ValueError):
            ScalarField(small_disc, values)

    def test_norm(self, small_disc):
        f = ScalarField(small_disc, np.full(small_disc.count, 2.0))
        assert f.norm() == pytest.approx(2.0 * np.sqrt(small_disc.count))


def test_observation_locations_must_be_distinct():
    with pytest.raises(ValueError):
        ObservationSet(x=[0.0, 0.0], y=[1.0, 1.0], values=[1.0, 2.0])


class TestTargets:
    def test_smooth_target_values(self):
        assert target_smooth(0.0) == pytest.approx(-10.0)
        assert target_smooth(np.pi / 8) == pytest.approx(-9.0)

    def test_smooth_target_is_radial(self):
        assert target_smooth_xy(0.3, 0.4) == pytest.approx(target_smooth_xy(-0.5, 0.0))

    def test_pointwise_target_values(self):
        assert target_pointwise(0.0, 0.0) == pytest.approx(0.0)
        expected = 1.0 / 1.2 ** np.exp(0.8)
        assert target_pointwise(0.5, 0.3) == pytest.approx(expected)

    def test_sample_field(self, small_disc):
        f = sample_field(small_disc, target_smooth_xy)
        np.testing.assert_allclose(f.values, target_smooth(small_disc.r))

    def test_observation_grid(self):
        obs = make_observation_grid(1.0, 6, target_pointwise)
        assert obs.count == 36
        assert obs.x.min() == pytest.approx(-0.5) and obs.x.max() == pytest.approx(0.5)
        np.testing.assert_allclose(obs.values, target_pointwise(obs.x, obs.y))


class TestRelativeError:
    def test_identical_fields(self, small_disc):
        f = sample_field(small_disc, target_smooth_xy)
        assert field_relative_error(f, f) == 0.0

    def test_known_value(self, small_disc):
        truth = ScalarField(small_disc, np.full(small_disc.count, 10.0))
        pred = ScalarField(small_disc, np.full(small_disc.count, 11.0))
        assert field_relative_error(pred, truth) == pytest.approx(0.1)

    def test_zero_truth_is_rejected(self, small_disc):
        zero = ScalarField(small_disc, np.zeros(small_disc.count))
        with pytest.raises(ValueError):
            field_relative_error(zero, zero)

    def test_geometry_mismatch(self, small_disc):
        other = PlaneGeometry.polar_disc(1.0, 4, 7)
        with pytest.raises(GeometryMismatchError):
            field_relative_error(
                ScalarField(small_disc, np.ones(small_disc.count)),
                ScalarField(other, np.ones(other.count)),
            )


class TestObservationOperator:
    def test_rows_are_convex_weights(self):
        g = PlaneGeometry.polar_disc(1.0, 6, 16)
        obs = make_observation_grid(1.0, 6, target_pointwise)
        op = observation_operator(g, obs)
        assert op.shape == (36, g.count)
        np.testing.assert_allclose(np.asarray(op.sum(axis=1)).ravel(), 1.0, atol=1e-12)
        assert op.data.min() >= -1e-12

    def test_reproduces_affine_fields(self):
        g = PlaneGeometry.polar_disc(1.0, 6, 16)
        obs = make_observation_grid(1.0, 6, target_pointwise)
        op = observation_operator(g, obs)
        affine = 2.0 * g.x - 3.0 * g.y + 1.0
        np.testing.assert_allclose(op @ affine, 2.0 * obs.x - 3.0 * obs.y + 1.0, atol=1e-12)

    def test_points_outside_are_rejected(self, small_disc):
        far = ObservationSet(x=[3.0], y=[0.0], values=[1.0])
        with pytest.raises(GeometryMismatchError):
            observation_operator(small_disc, far)


class TestCsv:
    def test_field_file_preserves_values(self, tmp_path, small_disc):
        f = sample_field(small_disc, target_smooth_xy)
        path = tmp_path / "field.csv"
        write_field_csv(f, path)
        assert path.read_text().splitlines()[0] == "r,theta,value"
        assert read_field_csv(path) == f

    def test_observation_file(self, tmp_path):
        obs = make_observation_grid(1.0, 3, target_pointwise)
        path = tmp_path / "obs.csv"
        write_observations_csv(obs, path)
        back = read_observations_csv(path)
        np.testing.assert_array_equal(back.values, obs.values)

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(SnapshotFormatError):
            read_field_csv(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(SnapshotFormatError):
            read_observations_csv(tmp_path / "nope.csv")
