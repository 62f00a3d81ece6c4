import numpy as np
import pytest

from wakerom.boundary import (
    Bounds,
    ParamRef,
    ParamVector,
    PerturbationScheme,
    inlet_from_params,
    parametrized_forward,
    perturb,
    sample_param_vectors,
    stack_params,
)
from wakerom.config import ParamRefConfig, PerturbationConfig
from wakerom.errors import DimensionError
from wakerom.neuralnet import DenseNetwork, forward


@pytest.fixture
def smooth_net() -> DenseNetwork:
    return DenseNetwork.build(2, [10, 5, 3], 1, "softplus", rng_seed=1)


@pytest.fixture
def pointwise_net() -> DenseNetwork:
    return DenseNetwork.build(2, [8, 2, 2], 1, "softplus", rng_seed=2)


class TestPresets:
    def test_last_two_biases(self, smooth_net):
        scheme = PerturbationScheme.last_two_biases(smooth_net)
        assert scheme.p == 4
        assert [(t.layer, t.kind) for t in scheme.targets] == [(2, "bias")] * 3 + [(3, "bias")]

    def test_last_hidden_layer(self, pointwise_net):
        scheme = PerturbationScheme.last_hidden_layer(pointwise_net)
        assert scheme.p == 6
        assert sum(t.kind == "weight" for t in scheme.targets) == 4
        assert {t.layer for t in scheme.targets} == {2}

    def test_from_config_explicit_targets(self, smooth_net):
        cfg = PerturbationConfig(
            preset=None,
            targets=[ParamRefConfig(layer=0, kind="weight", index=3), ParamRefConfig(layer=3, kind="bias", index=0)],
        )
        scheme = PerturbationScheme.from_config(cfg, smooth_net)
        assert scheme.targets == (ParamRef(0, "weight", 3), ParamRef(3, "bias", 0))

    def test_out_of_range_reference(self, smooth_net):
        scheme = PerturbationScheme((ParamRef(3, "bias", 1),))
        with pytest.raises(DimensionError):
            scheme.validate(smooth_net)


class TestPerturb:
    X = np.random.default_rng(0).uniform(0.0, 1.0, size=(9, 2))

    def test_zero_shift_is_identity(self, smooth_net):
        scheme = PerturbationScheme.last_two_biases(smooth_net)
        np.testing.assert_array_equal(
            parametrized_forward(smooth_net, scheme, np.zeros(4), self.X), forward(smooth_net, self.X)
        )

    def test_output_bias_shifts_output(self, smooth_net):
        scheme = PerturbationScheme.last_two_biases(smooth_net)
        shifted = parametrized_forward(smooth_net, scheme, [0.0, 0.0, 0.0, 0.3], self.X)
        np.testing.assert_allclose(shifted, forward(smooth_net, self.X) + 0.3, atol=1e-14)

    def test_weight_entry_is_shifted_row_major(self, pointwise_net):
        scheme = PerturbationScheme.last_hidden_layer(pointwise_net)
        mu = np.zeros(6)
        mu[1] = 0.25
        layer = perturb(pointwise_net, scheme, mu).layers[2]
        original = pointwise_net.layers[2]
        assert layer.weights[0, 1] == pytest.approx(original.weights[0, 1] + 0.25)
        np.testing.assert_array_equal(layer.bias, original.bias)

    def test_original_network_untouched(self, smooth_net):
        before = smooth_net.to_dict()
        perturb(smooth_net, PerturbationScheme.last_two_biases(smooth_net), np.ones(4))
        assert smooth_net.to_dict() == before

    def test_wrong_length(self, smooth_net):
        with pytest.raises(DimensionError):
            perturb(smooth_net, PerturbationScheme.last_two_biases(smooth_net), np.zeros(3))


class TestSampling:
    def test_draws_are_seeded_and_bounded(self):
        a = stack_params(sample_param_vectors(4, 50, (-0.5, 0.5), rng_seed=3))
        b = stack_params(sample_param_vectors(4, 50, (-0.5, 0.5), rng_seed=3))
        assert a.shape == (50, 4)
        np.testing.assert_array_equal(a, b)
        assert a.min() >= -0.5 and a.max() <= 0.5

    def test_bounds_dimension(self):
        with pytest.raises(DimensionError):
            sample_param_vectors(3, 5, Bounds.uniform(4, -1.0, 1.0), rng_seed=0)

    def test_reversed_bounds(self):
        with pytest.raises(ValueError):
            Bounds([1.0], [0.0])

    def test_param_vector_outside_bounds(self):
        with pytest.raises(ValueError):
            ParamVector([0.7], Bounds.uniform(1, -0.5, 0.5))

    def test_clip(self):
        b = Bounds.uniform(2, -1.0, 1.0)
        np.testing.assert_array_equal(b.clip([2.0, -0.5]), [1.0, -0.5])
        assert b.as_pairs() == [(-1.0, 1.0), (-1.0, 1.0)]


def test_inlet_lives_on_geometry(small_disc, smooth_net):
    scheme = PerturbationScheme.last_two_biases(smooth_net)
    inlet = inlet_from_params(smooth_net, scheme, np.zeros(4), small_disc)
    assert inlet.geometry == small_disc
    np.testing.assert_allclose(inlet.values, forward(smooth_net, small_disc.polar())[:, 0])


def test_inlet_needs_polar_network(small_disc):
    net = DenseNetwork.build(3, [4], 1, "softplus")
    with pytest.raises(DimensionError):
        inlet_from_params(net, PerturbationScheme.last_two_biases(net), np.zeros(5), small_disc)


@pytest.mark.slow
def test_perturbed_continuity_trained_surface_stays_closed(tmp_path):
    from wakerom.config import load_pipeline_config
    from wakerom.neuralnet import continuity_penalty, equispaced_radii, load_network
    from wakerom.pipeline import RunLayout, cmd_parametrize

    cfg = load_pipeline_config("case2")
    cmd_parametrize(cfg, tmp_path)
    net = load_network(RunLayout(tmp_path).network)
    scheme = PerturbationScheme.from_config(cfg.perturbation, net)
    radii = equispaced_radii(cfg.case.geometry.radius, cfg.parametrization.continuity_samples)
    trained = continuity_penalty(net, radii)

    mus = sample_param_vectors(scheme.p, 50, cfg.perturbation.bounds, 0)
    jumps = np.array([continuity_penalty(perturb(net, scheme, mu), radii) for mu in mus])
    assert np.median(jumps) < 10.0 * max(trained, 1e-6)
