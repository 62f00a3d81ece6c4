import math

import numpy as np
import pytest
from scipy import sparse

from wakerom.config import AnnConfig, RomConfig, TrainConfig
from wakerom.errors import ConfigError, FitError, WakeRomError
from wakerom.field import PlaneGeometry
from wakerom.regression import RbfModel
from wakerom.rom import (
    SensitivityAggregate,
    SensitivityReport,
    best_variant,
    cell_seed,
    load_rom,
    mean_relative_error,
    rom_fit,
    rom_predict,
    save_rom,
    sensitivity_analysis,
    split_pool,
)


def _fast_config(**overrides) -> RomConfig:
    quick = TrainConfig(learning_rate=5e-3, max_epochs=200)
    base = dict(
        latent_dim=3,
        m_list=[5, 10],
        runs=2,
        n_test=4,
        ann_pod=AnnConfig(train=quick),
        ann_linear_ae=AnnConfig(train=quick),
        ann_nonlinear_ae=AnnConfig(hidden=[6], train=quick),
    )
    base.update(overrides)
    return RomConfig(**base)


class TestRomFit:
    def test_pod_rbf_reproduces_training_snapshots(self, small_disc, make_linear_family):
        snaps = make_linear_family(small_disc, 12, p=3)
        # affine family of rank p + 1
        rom = rom_fit("POD-RBF", snaps, 4, _fast_config(latent_dim=4))
        assert isinstance(rom.regressor, RbfModel)
        assert mean_relative_error(rom, snaps) < 1e-8

    def test_predict_single_and_batch(self, small_disc, make_linear_family):
        snaps = make_linear_family(small_disc, 12)
        rom = rom_fit("POD-RBF", snaps, 3, _fast_config())
        one = rom_predict(rom, snaps.params[2])
        batch = rom.predict_values(snaps.params[:3])
        assert batch.shape == (small_disc.count, 3)
        np.testing.assert_allclose(one.values, batch[:, 2])

    def test_correlation_route(self, small_disc, make_linear_family):
        snaps = make_linear_family(small_disc, 12)
        a = rom_fit("POD-RBF", snaps, 4, _fast_config(latent_dim=4))
        b = rom_fit("POD-RBF", snaps, 4, _fast_config(latent_dim=4, pod_method="correlation"))
        np.testing.assert_allclose(
            a.predict_values(snaps.params[0]), b.predict_values(snaps.params[0]), rtol=1e-6, atol=1e-8
        )

    @pytest.mark.parametrize("name", ["POD-ANN", "linAE-RBF", "nonlinAE-ANN"])
    def test_every_family_fits(self, name, small_disc, make_linear_family):
        snaps = make_linear_family(small_disc, 10)
        cfg = _fast_config(
            linear_ae=_fast_config().linear_ae.model_copy(update={"train": TrainConfig(max_epochs=20)}),
            nonlinear_ae=_fast_config().nonlinear_ae.model_copy(
                update={"encoder_hidden": [8], "decoder_hidden": [8], "train": TrainConfig(max_epochs=20)}
            ),
        )
        rom = rom_fit(name, snaps, 3, cfg, rng_seed=1)
        assert rom.name == name
        assert np.all(np.isfinite(rom.predict_values(snaps.params[0])))

    def test_unknown_variant(self, small_disc, make_linear_family):
        with pytest.raises(FitError):
            rom_fit("POD-GP", make_linear_family(small_disc, 6), 3, _fast_config())

    def test_too_few_snapshots(self, small_disc, make_linear_family):
        with pytest.raises(FitError) as info:
            rom_fit("POD-RBF", make_linear_family(small_disc, 2), 3, _fast_config())
        assert info.value.variant == "POD-RBF"

    def test_saved_rom_predicts_identically(self, tmp_path, small_disc, make_linear_family):
        snaps = make_linear_family(small_disc, 10)
        for name in ("POD-RBF", "linAE-ANN"):
            cfg = _fast_config(
                linear_ae=_fast_config().linear_ae.model_copy(update={"train": TrainConfig(max_epochs=5)})
            )
            rom = rom_fit(name, snaps, 3, cfg)
            save_rom(rom, tmp_path / name)
            back = load_rom(tmp_path / name, small_disc)
            assert back.name == name
            np.testing.assert_allclose(
                back.predict_values(snaps.params[1]), rom.predict_values(snaps.params[1]), atol=1e-12
            )

    def test_load_missing_rom(self, tmp_path, small_disc):
        with pytest.raises(WakeRomError):
            load_rom(tmp_path, small_disc)


class TestProtocol:
    def test_split_is_seeded_and_disjoint(self):
        test, order = split_pool(20, 5, rng_seed=3)
        again, _ = split_pool(20, 5, rng_seed=3)
        np.testing.assert_array_equal(test, again)
        assert len(set(test) | set(order)) == 20
        assert not set(test) & set(order)

    def test_cell_seeds_differ(self):
        seeds = {cell_seed(0, v, M, r) for v in ("POD-RBF", "POD-ANN") for M in (10, 30) for r in range(3)}
        assert len(seeds) == 12

    def test_pool_too_small(self, small_disc, make_linear_family):
        pool = make_linear_family(small_disc, 10)
        with pytest.raises(ConfigError):
            sensitivity_analysis(["POD-RBF"], pool, [10], 3, 1, 0, _fast_config(m_list=[10]), n_test=4)

    def test_grid_is_complete_and_pod_rbf_is_run_invariant(self, small_disc, make_linear_family):
        pool = make_linear_family(small_disc, 14)
        cfg = _fast_config()
        report = sensitivity_analysis(["POD-RBF", "POD-ANN"], pool, [5, 10], 4, 2, 0, cfg, n_test=4)
        assert len(report.cells) == 2 * 2 * 2
        assert not report.failures()
        for agg in report.aggregate():
            if agg.variant == "POD-RBF":
                # deterministic fit, so every run gives the same error
                assert agg.test_min == agg.test_max
                assert agg.train_mean < 1e-6

    def test_threads_do_not_change_result(self, small_disc, make_linear_family):
        pool = make_linear_family(small_disc, 14)
        cfg = _fast_config()
        args = (["POD-ANN"], pool, [5, 10], 3, 2, 7, cfg)
        serial = sensitivity_analysis(*args, n_test=4, workers=1)
        threaded = sensitivity_analysis(*args, n_test=4, workers=3)
        assert serial.cells == threaded.cells

    def test_failures_are_recorded(self, small_disc, make_linear_family):
        pool = make_linear_family(small_disc, 10)
        # latent dimension 4 cannot be built from 3 snapshots
        cfg = _fast_config(latent_dim=3, m_list=[3, 6])
        report = sensitivity_analysis(["POD-RBF"], pool, [3, 6], 4, 1, 0, cfg, n_test=4)
        failed = report.failures()
        assert [c.M for c in failed] == [3]
        assert math.isnan(failed[0].test_error)
        rows = {a.M: a for a in report.aggregate()}
        assert rows[3].runs_ok == 0
        assert rows[6].runs_ok == 1

    def test_restricted_errors(self, small_disc, make_linear_family):
        pool = make_linear_family(small_disc, 14)
        restriction = sparse.csr_matrix(np.eye(small_disc.count)[:5])
        report = sensitivity_analysis(
            ["POD-RBF"], pool, [10], 3, 1, 0, _fast_config(m_list=[10]), restriction, n_test=4
        )
        assert report.cells[0].error is None

    def test_csv_files(self, tmp_path, small_disc, make_linear_family):
        pool = make_linear_family(small_disc, 14)
        report = sensitivity_analysis(["POD-RBF"], pool, [5, 10], 3, 2, 0, _fast_config(), n_test=4)
        report.write_csv(tmp_path / "cells.csv", tmp_path / "summary.csv")
        cells = (tmp_path / "cells.csv").read_text().splitlines()
        assert cells[0] == "variant,M,run,train_err,test_err,error"
        assert len(cells) == 1 + 4
        summary = SensitivityReport.read_summary(tmp_path / "summary.csv")
        assert summary == report.aggregate()


def _agg(variant, M, test_mean, runs_ok=3):
    return SensitivityAggregate(variant, M, runs_ok, 0.0, 0.0, 0.0, test_mean, test_mean, test_mean)


class TestBestVariant:
    def test_uses_largest_training_size(self):
        aggs = [
            _agg("POD-RBF", 10, 0.5), _agg("POD-ANN", 10, 0.1),
            _agg("POD-RBF", 90, 0.01), _agg("POD-ANN", 90, 0.05),
        ]
        assert best_variant(aggs) == "POD-RBF"

    def test_skips_failed_cells(self):
        aggs = [_agg("POD-RBF", 90, math.nan, runs_ok=0), _agg("POD-ANN", 30, 0.2)]
        assert best_variant(aggs) == "POD-ANN"

    def test_nothing_usable(self):
        with pytest.raises(WakeRomError):
            best_variant([_agg("POD-RBF", 10, math.nan, runs_ok=0)])


def test_geometry_property(small_disc, make_linear_family):
    rom = rom_fit("POD-RBF", make_linear_family(small_disc, 8), 3, _fast_config())
    assert rom.geometry == small_disc
    assert PlaneGeometry.polar_disc(1.0, 4, 8) == rom.geometry


def _saturating_pool():
    from wakerom.boundary import Bounds, PerturbationScheme, sample_param_vectors
    from wakerom.fullorder import SyntheticTransport, generate_snapshots
    from wakerom.neuralnet import DenseNetwork

    geometry = PlaneGeometry.polar_disc(1.0, 10, 20)
    net = DenseNetwork.build(2, [10, 5, 3], 1, "softplus", rng_seed=2)
    scheme = PerturbationScheme.last_two_biases(net)
    mus = sample_param_vectors(scheme.p, 100, Bounds.uniform(scheme.p, -0.5, 0.5), 0)
    provider = SyntheticTransport(geometry, blur_radius=0.15, attenuation=0.9, saturation=1.0)
    return generate_snapshots(net, scheme, mus, provider)


@pytest.mark.slow
def test_pod_rbf_error_shrinks_with_training_size():
    pool = _saturating_pool()
    m_list = [10, 30, 50, 70, 90]
    report = sensitivity_analysis(["POD-RBF"], pool, m_list, 3, 1, 0, RomConfig(m_list=m_list), n_test=10)
    means = [a.test_mean for a in sorted(report.aggregate(), key=lambda a: a.M)]
    for coarse, fine in zip(means, means[1:]):
        assert fine <= 1.1 * coarse


@pytest.mark.slow
def test_ann_regressor_beats_rbf_on_few_snapshots():
    report = sensitivity_analysis(
        ["POD-RBF", "POD-ANN"], _saturating_pool(), [10], 3, 3, 0, RomConfig(m_list=[10]), n_test=10
    )
    rbf = {c.run: c.test_error for c in report.cells if c.variant == "POD-RBF"}
    ann = {c.run: c.test_error for c in report.cells if c.variant == "POD-ANN"}
    assert len(ann) == 3 and all(np.isfinite(list(ann.values())))
    assert sum(ann[run] <= rbf[run] for run in range(3)) >= 2
