"""Dense feed-forward networks: evaluation, backpropagation and full-batch training.

Layer l maps h^{l-1} to h^l = sigma(W^l h^{l-1} + b^l). Batches are row-major:
an input matrix has one sample per row.
"""
import json
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from wakerom.config import TrainConfig
from wakerom.errors import DimensionError, DivergenceError

logger = logging.getLogger("wakerom.neuralnet")

LEAKY_SLOPE = 0.01

Params = list[tuple[np.ndarray, np.ndarray]]
Penalty = Callable[["DenseNetwork"], tuple[float, Params]]


class Activation(NamedTuple):
    fn: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]


ACTIVATIONS: dict[str, Activation] = {
    "identity": Activation(lambda z: z, np.ones_like),
    "softplus": Activation(lambda z: np.logaddexp(0.0, z), expit),
    "leaky_relu": Activation(
        lambda z: np.where(z > 0, z, LEAKY_SLOPE * z),
        lambda z: np.where(z > 0, 1.0, LEAKY_SLOPE),
    ),
}


@dataclass(frozen=True, eq=False)
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, ndmin=2)
        b = np.array(self.bias, dtype=float).ravel()
        if w.ndim != 2 or w.shape[0] != b.size:
            raise DimensionError(f"weights {w.shape} do not match bias of size {b.size}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}'")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class DenseNetwork:
    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.n_in != prev.n_out:
                raise DimensionError(
                    f"layer sizes do not chain: {prev.n_out} outputs feed {nxt.n_in} inputs"
                )
        object.__setattr__(self, "layers", layers)

    @classmethod
    def initialize(
        cls, layer_sizes: Sequence[int], activations: Sequence[str], rng_seed: int = 0
    ) -> "DenseNetwork":
        """Glorot-uniform weights and zero biases, seeded."""
        if len(activations) != len(layer_sizes) - 1:
            raise DimensionError(
                f"{len(layer_sizes) - 1} layers need as many activations, got {len(activations)}"
            )
        rng = np.random.default_rng(rng_seed)
        layers = []
        for n_in, n_out, act in zip(layer_sizes, layer_sizes[1:], activations):
            limit = np.sqrt(6.0 / (n_in + n_out))
            layers.append(
                DenseLayer(rng.uniform(-limit, limit, size=(n_out, n_in)), np.zeros(n_out), act)
            )
        return cls(tuple(layers))

    @classmethod
    def build(
        cls,
        input_dim: int,
        hidden: Sequence[int],
        output_dim: int,
        activation: str,
        output_activation: str = "identity",
        rng_seed: int = 0,
    ) -> "DenseNetwork":
        sizes = [input_dim, *hidden, output_dim]
        acts = [activation] * len(hidden) + [output_activation]
        return cls.initialize(sizes, acts, rng_seed)

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n_out

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [layer.n_out for layer in self.layers]

    @property
    def activations(self) -> list[str]:
        return [layer.activation for layer in self.layers]

    def params(self) -> Params:
        return [(layer.weights, layer.bias) for layer in self.layers]

    def with_params(self, params: Params) -> "DenseNetwork":
        return DenseNetwork(
            tuple(DenseLayer(w, b, act) for (w, b), act in zip(params, self.activations))
        )

    def split(self, n_layers: int) -> tuple["DenseNetwork", "DenseNetwork"]:
        return DenseNetwork(self.layers[:n_layers]), DenseNetwork(self.layers[n_layers:])

    def to_dict(self) -> dict:
        return {
            "layer_sizes": self.layer_sizes,
            "activations": self.activations,
            "weights": [layer.weights.tolist() for layer in self.layers],
            "biases": [layer.bias.tolist() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DenseNetwork":
        try:
            layers = tuple(
                DenseLayer(np.array(w, dtype=float), np.array(b, dtype=float), act)
                for w, b, act in zip(
                    data["weights"], data["biases"], data["activations"], strict=True
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"malformed network document: {e}") from e
        net = cls(layers)
        if net.layer_sizes != list(data.get("layer_sizes", net.layer_sizes)):
            raise DimensionError("layer_sizes disagree with the stored weights")
        return net


def save_network(net: DenseNetwork, path: Path) -> None:
    Path(path).write_text(json.dumps(net.to_dict()), encoding="utf-8")


def load_network(path: Path) -> DenseNetwork:
    return DenseNetwork.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _as_batch(x, dim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DimensionError(f"expected inputs of width {dim}, got shape {np.shape(x)}")
    return arr, single


def _forward(params: Params, acts: Sequence[str], x: np.ndarray, cache: list | None = None):
    h = x
    for (w, b), act in zip(params, acts):
        z = h @ w.T + b
        if cache is not None:
            cache.append((h, z))
        h = ACTIVATIONS[act].fn(z)
    return h


def _backward(params: Params, acts: Sequence[str], cache: list, grad_out: np.ndarray) -> Params:
    grads: Params = [None] * len(params)  # type: ignore[list-item]
    grad_h = grad_out
    for i in range(len(params) - 1, -1, -1):
        h_prev, z = cache[i]
        dz = grad_h * ACTIVATIONS[acts[i]].grad(z)
        grads[i] = (dz.T @ h_prev, dz.sum(axis=0))
        if i:
            grad_h = dz @ params[i][0]
    return grads


def forward(net: DenseNetwork, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of row vectors."""
    batch, single = _as_batch(x, net.input_dim)
    out = _forward(net.params(), net.activations, batch)
    return out[0] if single else out


def _zeros_like(params: Params) -> Params:
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]


class ContinuityPenalty:
    """|| N(r_i, 0) - N(r_i, 2pi) || over sampled radii, with its parameter gradient."""

    def __init__(self, radii):
        self.radii = np.asarray(radii, dtype=float).ravel()

    def __call__(self, net: DenseNetwork) -> tuple[float, Params]:
        if net.input_dim != 2:
            raise DimensionError(f"continuity needs (r, theta) inputs, network takes {net.input_dim}")
        if self.radii.size == 0:
            return 0.0, _zeros_like(net.params())

        at_zero = np.column_stack([self.radii, np.zeros_like(self.radii)])
        at_full = np.column_stack([self.radii, np.full_like(self.radii, 2.0 * np.pi)])
        params, acts = net.params(), net.activations
        cache_a: list = []
        cache_b: list = []
        diff = _forward(params, acts, at_zero, cache_a) - _forward(params, acts, at_full, cache_b)
        value = float(np.linalg.norm(diff))
        if value == 0.0:
            return 0.0, _zeros_like(params)

        unit = diff / value
        grads_a = _backward(params, acts, cache_a, unit)
        grads_b = _backward(params, acts, cache_b, -unit)
        return value, [(wa + wb, ba + bb) for (wa, ba), (wb, bb) in zip(grads_a, grads_b)]


def equispaced_radii(radius: float, count: int) -> np.ndarray:
    return np.linspace(0.0, radius, count)


def continuity_penalty(net: DenseNetwork, radii) -> float:
    return ContinuityPenalty(radii)(net)[0]


@dataclass
class LossReport:
    history: np.ndarray
    final_loss: float
    final_mse: float
    final_weight_decay: float
    final_penalty: float
    epochs: int
    stop_reason: str
    extra: dict = field(default_factory=dict)


def loss_and_grad(
    net: DenseNetwork,
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
    extra_loss: Penalty | None = None,
) -> tuple[float, dict[str, float], Params]:
    """Total loss MSE + (alpha/2)||W||^2 + lambda * penalty and its parameter gradient."""
    return _loss_and_grad(net.params(), net.activations, inputs, targets, cfg, extra_loss)


def _loss_and_grad(params, acts, inputs, targets, cfg, extra_loss):
    cache: list = []
    out = _forward(params, acts, inputs, cache)
    diff = out - targets
    mse = float(np.mean(diff**2))
    grads = _backward(params, acts, cache, 2.0 * diff / diff.size)

    alpha = cfg.weight_decay
    decay = 0.5 * alpha * float(sum(np.sum(w**2) for w, _ in params))
    if alpha:
        grads = [(gw + alpha * w, gb) for (gw, gb), (w, _) in zip(grads, params)]

    penalty = 0.0
    if extra_loss is not None:
        net = DenseNetwork(tuple(DenseLayer(w, b, a) for (w, b), a in zip(params, acts)))
        penalty, pgrads = extra_loss(net)
        lam = cfg.continuity_weight
        if lam:
            grads = [(gw + lam * pw, gb + lam * pb) for (gw, gb), (pw, pb) in zip(grads, pgrads)]

    total = mse + decay + cfg.continuity_weight * penalty
    return total, {"mse": mse, "weight_decay": decay, "penalty": penalty}, grads


class _Adam:
    def __init__(self, params: Params, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = _zeros_like(params)
        self.v = _zeros_like(params)
        self.t = 0

    def step(self, params: Params, grads: Params) -> Params:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        updated = []
        for i, ((w, b), (gw, gb)) in enumerate(zip(params, grads)):
            mw, mb = self.m[i]
            vw, vb = self.v[i]
            mw = self.beta1 * mw + (1 - self.beta1) * gw
            mb = self.beta1 * mb + (1 - self.beta1) * gb
            vw = self.beta2 * vw + (1 - self.beta2) * gw**2
            vb = self.beta2 * vb + (1 - self.beta2) * gb**2
            self.m[i], self.v[i] = (mw, mb), (vw, vb)
            updated.append(
                (
                    w - self.lr * (mw / c1) / (np.sqrt(vw / c2) + self.eps),
                    b - self.lr * (mb / c1) / (np.sqrt(vb / c2) + self.eps),
                )
            )
        return updated


class _GradientDescent:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Params, grads: Params) -> Params:
        return [(w - self.lr * gw, b - self.lr * gb) for (w, b), (gw, gb) in zip(params, grads)]


def train(
    net: DenseNetwork,
    inputs,
    targets,
    cfg: TrainConfig,
    extra_loss: Penalty | None = None,
) -> tuple[DenseNetwork, LossReport]:
    """Full-batch training from the given weights until max_epochs or target_loss."""
    x, _ = _as_batch(inputs, net.input_dim)
    t, _ = _as_batch(targets, net.output_dim)
    if x.shape[0] != t.shape[0]:
        raise DimensionError(f"{x.shape[0]} input rows but {t.shape[0]} target rows")

    acts = net.activations
    params = [(w.copy(), b.copy()) for w, b in net.params()]
    if cfg.optimizer == "adam":
        optimizer = _Adam(params, cfg.learning_rate)
    else:
        optimizer = _GradientDescent(cfg.learning_rate)

    history: list[float] = []
    epoch = 0
    stop_reason = "max_epochs"
    while True:
        loss, terms, grads = _loss_and_grad(params, acts, x, t, cfg, extra_loss)
        history.append(loss)
        if not np.isfinite(loss):
            raise DivergenceError(epoch, loss)
        if cfg.target_loss is not None and loss <= cfg.target_loss:
            stop_reason = "target_loss"
            break
        if cfg.max_epochs is not None and epoch >= cfg.max_epochs:
            break
        if cfg.log_every and epoch % cfg.log_every == 0:
            logger.info(f"epoch {epoch}: loss={loss:.6e} mse={terms['mse']:.6e}")
        params = optimizer.step(params, grads)
        epoch += 1

    logger.debug(f"training stopped after {epoch} epochs ({stop_reason}), loss={loss:.6e}")
    trained = net.with_params(params)
    report = LossReport(
        history=np.asarray(history),
        final_loss=loss,
        final_mse=terms["mse"],
        final_weight_decay=terms["weight_decay"],
        final_penalty=terms["penalty"],
        epochs=epoch,
        stop_reason=stop_reason,
    )
    return trained, report
