"""A posteriori parametrization of a trained network by shifting selected biases/weights."""
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np

from wakerom.config import PerturbationConfig
from wakerom.errors import DimensionError
from wakerom.field import PlaneGeometry, ScalarField
from wakerom.neuralnet import DenseLayer, DenseNetwork, forward

logger = logging.getLogger("wakerom.boundary")


@dataclass(frozen=True)
class ParamRef:
    layer: int
    kind: Literal["bias", "weight"]
    index: int


@dataclass(frozen=True, eq=False)
class Bounds:
    """Per-coordinate closed intervals."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float).ravel()
        upper = np.array(self.upper, dtype=float).ravel()
        if lower.shape != upper.shape:
            raise DimensionError("lower and upper bounds differ in length")
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def uniform(cls, dim: int, low: float, high: float) -> "Bounds":
        return cls(np.full(dim, low), np.full(dim, high))

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, values) -> bool:
        values = np.asarray(values, dtype=float)
        return bool(np.all(values >= self.lower) and np.all(values <= self.upper))

    def clip(self, values) -> np.ndarray:
        return np.clip(values, self.lower, self.upper)

    def as_pairs(self) -> list[tuple[float, float]]:
        return [(float(lo), float(hi)) for lo, hi in zip(self.lower, self.upper)]


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    bounds: Bounds

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.bounds.dim:
            raise DimensionError(f"{values.size} values for {self.bounds.dim} bounds")
        if not self.bounds.contains(values):
            raise ValueError(f"parameter vector {values.tolist()} outside bounds")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class PerturbationScheme:
    """Ordered parameter references; order fixes the coordinate order of mu."""

    targets: tuple[ParamRef, ...]

    @property
    def p(self) -> int:
        return len(self.targets)

    def validate(self, net: DenseNetwork) -> None:
        for ref in self.targets:
            if not 0 <= ref.layer < len(net.layers):
                raise DimensionError(f"{ref}: network has {len(net.layers)} layers")
            layer = net.layers[ref.layer]
            size = layer.bias.size if ref.kind == "bias" else layer.weights.size
            if not 0 <= ref.index < size:
                raise DimensionError(f"{ref}: layer {ref.layer} has {size} {ref.kind} entries")

    @classmethod
    def last_two_biases(cls, net: DenseNetwork) -> "PerturbationScheme":
        """Biases of the final hidden layer plus the output bias."""
        if len(net.layers) < 2:
            raise DimensionError("last_two_biases needs at least one hidden layer")
        refs = []
        for layer in (len(net.layers) - 2, len(net.layers) - 1):
            refs += [ParamRef(layer, "bias", i) for i in range(net.layers[layer].bias.size)]
        return cls(tuple(refs))

    @classmethod
    def last_hidden_layer(cls, net: DenseNetwork) -> "PerturbationScheme":
        """Every weight and bias entry of the final hidden layer."""
        if len(net.layers) < 2:
            raise DimensionError("last_hidden_layer needs at least one hidden layer")
        layer = len(net.layers) - 2
        shape = net.layers[layer].weights.shape
        refs = [ParamRef(layer, "weight", i) for i in range(shape[0] * shape[1])]
        refs += [ParamRef(layer, "bias", i) for i in range(shape[0])]
        return cls(tuple(refs))

    @classmethod
    def from_config(cls, cfg: PerturbationConfig, net: DenseNetwork) -> "PerturbationScheme":
        if cfg.targets:
            scheme = cls(tuple(ParamRef(t.layer, t.kind, t.index) for t in cfg.targets))
        elif cfg.preset == "last_hidden_layer":
            scheme = cls.last_hidden_layer(net)
        else:
            scheme = cls.last_two_biases(net)
        scheme.validate(net)
        return scheme


def _mu_values(mu, p: int) -> np.ndarray:
    values = mu.values if isinstance(mu, ParamVector) else np.asarray(mu, dtype=float).ravel()
    if values.size != p:
        raise DimensionError(f"mu has {values.size} entries, scheme expects {p}")
    return values


def perturb(net: DenseNetwork, scheme: PerturbationScheme, mu) -> DenseNetwork:
    """A new network with each targeted entry shifted by its mu coordinate."""
    scheme.validate(net)
    values = _mu_values(mu, scheme.p)
    weights = {}
    biases = {}
    for ref, shift in zip(scheme.targets, values):
        layer = net.layers[ref.layer]
        if ref.kind == "bias":
            arr = biases.setdefault(ref.layer, layer.bias.copy())
        else:
            arr = weights.setdefault(ref.layer, layer.weights.copy()).reshape(-1)
        arr[ref.index] += shift

    layers = tuple(
        DenseLayer(weights.get(i, layer.weights), biases.get(i, layer.bias), layer.activation)
        if i in weights or i in biases
        else layer
        for i, layer in enumerate(net.layers)
    )
    return DenseNetwork(layers)


def parametrized_forward(net: DenseNetwork, scheme: PerturbationScheme, mu, x) -> np.ndarray:
    return forward(perturb(net, scheme, mu), x)


def sample_param_vectors(
    p: int, M: int, bounds: Bounds | tuple[float, float], rng_seed: int
) -> list[ParamVector]:
    """M i.i.d. uniform draws in the box, deterministic under the seed."""
    if M < 1:
        raise ValueError(f"M must be positive, got {M}")
    if not isinstance(bounds, Bounds):
        bounds = Bounds.uniform(p, *bounds)
    if bounds.dim != p:
        raise DimensionError(f"bounds have {bounds.dim} coordinates, expected {p}")
    rng = np.random.default_rng(rng_seed)
    draws = rng.uniform(bounds.lower, bounds.upper, size=(M, p))
    return [ParamVector(row, bounds) for row in draws]


def inlet_from_params(
    net: DenseNetwork, scheme: PerturbationScheme, mu, geometry: PlaneGeometry
) -> ScalarField:
    if net.input_dim != 2:
        raise DimensionError(f"inlet networks take (r, theta), this one takes {net.input_dim}")
    values = parametrized_forward(net, scheme, mu, geometry.polar())
    return ScalarField(geometry, values[:, 0])


def stack_params(mus: Sequence) -> np.ndarray:
    """(M, p) matrix from ParamVectors or plain rows."""
    return np.vstack([m.values if isinstance(m, ParamVector) else np.ravel(m) for m in mus])
