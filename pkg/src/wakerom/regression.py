"""Parameter-to-latent maps: multiquadric RBF interpolation and ANN regression."""
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist, pdist

from wakerom.config import AnnConfig, TrainConfig
from wakerom.errors import DimensionError, RegressionError
from wakerom.neuralnet import DenseNetwork, LossReport, forward, train

logger = logging.getLogger("wakerom.regression")

CONDITION_LIMIT = 1e12


def multiquadric(r, epsilon: float) -> np.ndarray:
    """phi(r) = sqrt(1 + (epsilon r)^2)."""
    return np.sqrt(1.0 + (epsilon * np.asarray(r, dtype=float)) ** 2)


def _as_rows(x, width: int, what: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise DimensionError(f"{what} must have width {width}, got shape {np.shape(x)}")
    return arr, single


@dataclass(frozen=True, eq=False)
class RbfModel:
    centers: np.ndarray
    weights: np.ndarray
    epsilon: float
    regularization: float = 0.0
    kernel: str = "multiquadric"

    @property
    def p(self) -> int:
        return self.centers.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.weights.shape[1]

    def predict(self, mu) -> np.ndarray:
        return rbf_predict(self, mu)

    def to_dict(self) -> dict:
        return {
            "centers": self.centers.tolist(),
            "weights": self.weights.tolist(),
            "epsilon": self.epsilon,
            "regularization": self.regularization,
            "kernel": self.kernel,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RbfModel":
        if data.get("kernel", "multiquadric") != "multiquadric":
            raise RegressionError(f"unsupported kernel '{data['kernel']}'")
        return cls(
            centers=np.array(data["centers"], dtype=float, ndmin=2),
            weights=np.array(data["weights"], dtype=float, ndmin=2),
            epsilon=float(data["epsilon"]),
            regularization=float(data.get("regularization", 0.0)),
        )


def _interpolation_matrix(centers: np.ndarray, epsilon: float) -> np.ndarray:
    return multiquadric(cdist(centers, centers), epsilon)


def _check_training(params, latents) -> tuple[np.ndarray, np.ndarray]:
    X = np.array(params, dtype=float, ndmin=2)
    Y = np.array(latents, dtype=float, ndmin=2)
    if X.shape[0] < 1:
        raise RegressionError("at least one training point is required")
    if X.shape[0] != Y.shape[0]:
        raise DimensionError(f"{X.shape[0]} parameter rows but {Y.shape[0]} latent rows")
    if X.shape[0] > 1 and np.min(pdist(X)) == 0.0:
        raise RegressionError("RBF centers must be pairwise distinct")
    return X, Y


def rbf_fit(params, latents, epsilon: float = 1.0) -> RbfModel:
    """Solve Phi w = latents with Phi_ij = phi(||mu_i - mu_j||).

    When the condition estimate exceeds 1e12, a Tikhonov shift of
    1e-10 * trace(Phi) / M is added to the diagonal and logged.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    X, Y = _check_training(params, latents)
    phi = _interpolation_matrix(X, epsilon)
    condition = float(np.linalg.cond(phi))

    reg = 0.0
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        reg = 1e-10 * np.trace(phi) / phi.shape[0]
        logger.warning(
            f"RBF matrix ill-conditioned (cond={condition:.3e}), regularizing with {reg:.3e}"
        )
        phi = phi + reg * np.eye(phi.shape[0])

    try:
        weights = scipy.linalg.solve(phi, Y)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise RegressionError(f"RBF system could not be solved: {e}", condition) from e
    if not np.all(np.isfinite(weights)):
        raise RegressionError("RBF weights are not finite", condition)
    return RbfModel(centers=X, weights=weights, epsilon=float(epsilon), regularization=reg)


def rbf_predict(model: RbfModel, mu) -> np.ndarray:
    """sum_i w_i phi(||mu - mu_i||) for one vector or a batch of rows."""
    X, single = _as_rows(mu, model.p, "mu")
    out = multiquadric(cdist(X, model.centers), model.epsilon) @ model.weights
    return out[0] if single else out


def rbf_loo_errors(params, latents, epsilon: float) -> np.ndarray:
    """Leave-one-out residuals c_k / (Phi^-1)_kk, one row per training point."""
    X, Y = _check_training(params, latents)
    try:
        inverse = scipy.linalg.inv(_interpolation_matrix(X, epsilon))
    except (np.linalg.LinAlgError, ValueError) as e:
        raise RegressionError(f"RBF matrix is singular: {e}") from e
    return (inverse @ Y) / np.diag(inverse)[:, None]


def tune_epsilon(params, latents, candidates: Sequence[float]) -> float:
    """Shape parameter with the smallest leave-one-out error norm."""
    if len(candidates) == 0:
        raise ValueError("no epsilon candidates given")
    scores = []
    for eps in candidates:
        try:
            scores.append(float(np.linalg.norm(rbf_loo_errors(params, latents, eps))))
        except RegressionError:
            scores.append(np.inf)
    best = float(candidates[int(np.argmin(scores))])
    logger.debug(f"LOO scores {dict(zip(candidates, scores))}, chose epsilon={best}")
    return best


@dataclass(frozen=True, eq=False)
class AnnRegressor:
    """Network from standardized mu to standardized latents, plus the affine scalers."""

    net: DenseNetwork
    in_shift: np.ndarray
    in_scale: np.ndarray
    out_shift: np.ndarray
    out_scale: np.ndarray
    report: LossReport | None = None

    @property
    def p(self) -> int:
        return self.net.input_dim

    @property
    def latent_dim(self) -> int:
        return self.net.output_dim

    def predict(self, mu) -> np.ndarray:
        return ann_predict(self, mu)

    def to_dict(self) -> dict:
        return {
            "network": self.net.to_dict(),
            "in_shift": self.in_shift.tolist(),
            "in_scale": self.in_scale.tolist(),
            "out_shift": self.out_shift.tolist(),
            "out_scale": self.out_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnnRegressor":
        return cls(
            DenseNetwork.from_dict(data["network"]),
            *(np.asarray(data[k], dtype=float) for k in ("in_shift", "in_scale", "out_shift", "out_scale")),
        )


def _scaler(data: np.ndarray, enabled: bool) -> tuple[np.ndarray, np.ndarray]:
    width = data.shape[1]
    if not enabled:
        return np.zeros(width), np.ones(width)
    std = data.std(axis=0)
    return data.mean(axis=0), np.where(std > 0, std, 1.0)


def ann_fit(
    params,
    latents,
    cfg: TrainConfig,
    hidden: Sequence[int] = (4, 4),
    activation: str = "softplus",
    scale: bool = True,
) -> AnnRegressor:
    X, Y = _check_training(params, latents)
    in_shift, in_scale = _scaler(X, scale)
    out_shift, out_scale = _scaler(Y, scale)
    net = DenseNetwork.build(X.shape[1], hidden, Y.shape[1], activation, rng_seed=cfg.rng_seed)
    trained, report = train(net, (X - in_shift) / in_scale, (Y - out_shift) / out_scale, cfg)
    logger.debug(
        f"ANN {[X.shape[1], *hidden, Y.shape[1]]} trained: {report.epochs} epochs, "
        f"loss={report.final_loss:.3e} ({report.stop_reason})"
    )
    return AnnRegressor(trained, in_shift, in_scale, out_shift, out_scale, report)


def ann_fit_from_config(params, latents, cfg: AnnConfig, rng_seed: int) -> AnnRegressor:
    train_cfg = cfg.train.model_copy(update={"rng_seed": rng_seed})
    return ann_fit(params, latents, train_cfg, cfg.hidden, cfg.activation, cfg.scale)


def ann_predict(model: AnnRegressor, mu) -> np.ndarray:
    X, single = _as_rows(mu, model.p, "mu")
    out = forward(model.net, (X - model.in_shift) / model.in_scale) * model.out_scale + model.out_shift
    return out[0] if single else out


def save_regressor(model: RbfModel | AnnRegressor, path: Path) -> None:
    kind = "rbf" if isinstance(model, RbfModel) else "ann"
    Path(path).write_text(json.dumps({"type": kind, **model.to_dict()}), encoding="utf-8")


def load_regressor(path: Path) -> RbfModel | AnnRegressor:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = data.pop("type")
    return RbfModel.from_dict(data) if kind == "rbf" else AnnRegressor.from_dict(data)
