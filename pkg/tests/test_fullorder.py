import json

import httpx
import numpy as np
import pytest

from wakerom.boundary import PerturbationScheme, inlet_from_params
from wakerom.config import ProviderConfig, Settings
from wakerom.errors import (
    GeometryMismatchError,
    ProviderError,
    SnapshotFormatError,
    WakeRomError,
)
from wakerom.field import PlaneGeometry, ScalarField
from wakerom.fullorder import (
    RemoteSolverProvider,
    SnapshotSet,
    SyntheticTransport,
    gaussian_kernel,
    generate_snapshots,
    load_snapshots,
    provider_from_config,
    save_snapshots,
)
from wakerom.neuralnet import DenseNetwork
from wakerom.solver_client import SolverClient


def _random_field(geometry, seed=0) -> ScalarField:
    return ScalarField(geometry, np.random.default_rng(seed).normal(size=geometry.count))


class TestGaussianKernel:
    def test_rows_sum_to_one(self, small_disc):
        k = gaussian_kernel(small_disc, 0.3)
        np.testing.assert_allclose(np.asarray(k.sum(axis=1)).ravel(), 1.0, atol=1e-14)

    def test_dense_kernel_matches_double_loop(self, small_disc):
        sigma = 0.4
        pts = small_disc.cartesian()
        n = small_disc.count
        oracle = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                oracle[i, j] = np.exp(-np.sum((pts[i] - pts[j]) ** 2) / (2 * sigma**2))
            oracle[i] /= oracle[i].sum()
        np.testing.assert_allclose(gaussian_kernel(small_disc, sigma, None).toarray(), oracle, atol=1e-14)

    def test_cutoff_drops_far_pairs(self, small_disc):
        sigma = 0.1
        k = gaussian_kernel(small_disc, sigma, cutoff_sigmas=3.0).tocoo()
        pts = small_disc.cartesian()
        dist = np.linalg.norm(pts[k.row] - pts[k.col], axis=1)
        assert dist.max() <= 3.0 * sigma + 1e-12


class TestSyntheticTransport:
    def test_constant_inlet_is_attenuated_constant(self, small_disc):
        provider = SyntheticTransport(small_disc, blur_radius=0.3, attenuation=0.9)
        wake = provider.solve(ScalarField(small_disc, np.full(small_disc.count, -10.0)))
        np.testing.assert_allclose(wake.values, -9.0, atol=1e-12)

    def test_vanishing_blur_is_identity(self, small_disc):
        provider = SyntheticTransport(small_disc, blur_radius=1e-4)
        inlet = _random_field(small_disc)
        np.testing.assert_allclose(provider.solve(inlet).values, inlet.values, atol=1e-12)

    def test_linear_without_saturation(self, small_disc):
        provider = SyntheticTransport(small_disc, blur_radius=0.3, attenuation=0.8)
        u, v = _random_field(small_disc, 1), _random_field(small_disc, 2)
        combined = provider.solve(ScalarField(small_disc, 2.0 * u.values - 0.5 * v.values))
        expected = 2.0 * provider.solve(u).values - 0.5 * provider.solve(v).values
        np.testing.assert_allclose(combined.values, expected, atol=1e-12)

    def test_saturation_bounds_output(self, small_disc):
        provider = SyntheticTransport(small_disc, blur_radius=0.3, attenuation=0.5, saturation=1.0)
        wake = provider.solve(ScalarField(small_disc, np.full(small_disc.count, 100.0)))
        assert np.all(np.abs(wake.values) <= 0.5)

    def test_geometry_mismatch(self, small_disc):
        provider = SyntheticTransport(small_disc, blur_radius=0.3)
        with pytest.raises(GeometryMismatchError):
            provider.solve(_random_field(PlaneGeometry.polar_disc(1.0, 3, 8)))

    def test_attenuation_range(self, small_disc):
        with pytest.raises(ValueError):
            SyntheticTransport(small_disc, blur_radius=0.3, attenuation=1.5)


class _FailsAt:
    def __init__(self, geometry, index):
        self.geometry = geometry
        self.index = index
        self.calls = 0

    def solve(self, inlet):
        self.calls += 1
        if self.calls == self.index + 1:
            raise RuntimeError("solver crashed")
        return inlet

    def describe(self):
        return {"kind": "test"}


class TestGenerateSnapshots:
    @pytest.fixture
    def setup(self, small_disc):
        net = DenseNetwork.build(2, [10, 5, 3], 1, "softplus", rng_seed=5)
        scheme = PerturbationScheme.last_two_biases(net)
        provider = SyntheticTransport(small_disc, blur_radius=0.3, attenuation=0.9)
        mus = np.random.default_rng(0).uniform(-0.5, 0.5, size=(6, 4))
        return net, scheme, provider, mus

    def test_columns_follow_mu_order(self, setup, small_disc):
        net, scheme, provider, mus = setup
        snaps = generate_snapshots(net, scheme, list(mus), provider)
        assert (snaps.M, snaps.p, snaps.P) == (6, 4, small_disc.count)
        for i in (0, 5):
            expected = provider.solve(inlet_from_params(net, scheme, mus[i], small_disc))
            np.testing.assert_array_equal(snaps.wakes[:, i], expected.values)
        assert snaps.meta["provider"]["kind"] == "synthetic"

    def test_threads_do_not_change_result(self, setup):
        net, scheme, provider, mus = setup
        serial = generate_snapshots(net, scheme, list(mus), provider, workers=1)
        threaded = generate_snapshots(net, scheme, list(mus), provider, workers=3)
        np.testing.assert_array_equal(serial.wakes, threaded.wakes)

    def test_failure_reports_index(self, setup, small_disc):
        net, scheme, _, mus = setup
        with pytest.raises(ProviderError) as info:
            generate_snapshots(net, scheme, list(mus), _FailsAt(small_disc, 2))
        assert info.value.index == 2


class TestSnapshotFiles:
    def test_saved_set_loads_identically(self, tmp_path, small_disc, make_low_rank):
        snaps = make_low_rank(small_disc, 5, 2)
        save_snapshots(snaps, tmp_path)
        back = load_snapshots(tmp_path, small_disc)
        np.testing.assert_array_equal(back.params, snaps.params)
        np.testing.assert_array_equal(back.wakes, snaps.wakes)
        header = (tmp_path / "wakes.csv").read_text().splitlines()[0]
        assert header == "r,theta,snap_1,snap_2,snap_3,snap_4,snap_5"
        assert json.loads((tmp_path / "meta.json").read_text())["M"] == 5

    def test_count_mismatch(self, tmp_path, small_disc, make_low_rank):
        save_snapshots(make_low_rank(small_disc, 5, 2), tmp_path)
        lines = (tmp_path / "params.csv").read_text().splitlines()
        (tmp_path / "params.csv").write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(SnapshotFormatError, match="count mismatch"):
            load_snapshots(tmp_path)

    def test_geometry_mismatch(self, tmp_path, small_disc, make_low_rank):
        save_snapshots(make_low_rank(small_disc, 3, 2), tmp_path)
        other = PlaneGeometry(r=small_disc.r * 2.0, theta=small_disc.theta)
        with pytest.raises(GeometryMismatchError):
            load_snapshots(tmp_path, other)

    def test_subset(self, small_disc, make_low_rank):
        snaps = make_low_rank(small_disc, 6, 2)
        sub = snaps.subset([4, 1])
        np.testing.assert_array_equal(sub.wakes[:, 0], snaps.wakes[:, 4])
        np.testing.assert_array_equal(sub.params[1], snaps.params[1])

    def test_set_shapes_are_checked(self, small_disc):
        with pytest.raises(Exception, match="count mismatch"):
            SnapshotSet(np.zeros((3, 2)), np.zeros((small_disc.count, 4)), small_disc)


class TestRemoteProvider:
    def _provider(self, geometry, handler, token="secret"):
        http = httpx.Client(base_url="http://solver.test", transport=httpx.MockTransport(handler))
        return RemoteSolverProvider(SolverClient(http, token), geometry)

    def test_posts_inlet_and_reads_wake(self, small_disc):
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["auth"] = request.headers.get("authorization")
            body = json.loads(request.content)
            return httpx.Response(200, json={"wake": [2.0 * v for v in body["inlet"]]})

        inlet = _random_field(small_disc)
        wake = self._provider(small_disc, handler).solve(inlet)
        np.testing.assert_allclose(wake.values, 2.0 * inlet.values)
        assert seen["auth"] == "Bearer secret"

    def test_retries_once_on_503(self, small_disc):
        calls = []

        def handler(request):
            calls.append(1)
            if len(calls) == 1:
                return httpx.Response(503, text="busy")
            return httpx.Response(200, json={"wake": json.loads(request.content)["inlet"]})

        self._provider(small_disc, handler).solve(_random_field(small_disc))
        assert len(calls) == 2

    def test_error_response(self, small_disc):
        def handler(request):
            return httpx.Response(422, json={"detail": "bad inlet"})

        with pytest.raises(WakeRomError, match="bad inlet"):
            self._provider(small_disc, handler).solve(_random_field(small_disc))

    def test_close_releases_http_client(self, small_disc):
        provider = self._provider(small_disc, lambda request: httpx.Response(200, json={"wake": []}))
        provider.close()
        assert provider.client.http.is_closed

    def test_remote_needs_url(self, small_disc):
        with pytest.raises(WakeRomError):
            provider_from_config(ProviderConfig(kind="remote"), small_disc, Settings(solver_url=None))


def test_remote_provider_from_settings_owns_its_client(small_disc):
    settings = Settings(_env_file=None, solver_url="http://solver.test", solver_token="t")
    provider = provider_from_config(ProviderConfig(kind="remote"), small_disc, settings)
    assert provider.describe()["url"].startswith("http://solver.test")
    provider.close()
    assert provider.client.http.is_closed
