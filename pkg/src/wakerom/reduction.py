"""Compression of the snapshot matrix: POD (SVD and correlation routes) and autoencoders.

Every reducer maps fields of length P to latent vectors of length L and back.
Arrays follow the snapshot-matrix layout: one field per column.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
import scipy.linalg

from wakerom.config import AeConfig, TrainConfig
from wakerom.errors import DimensionError, GeometryMismatchError, ReductionError
from wakerom.field import PlaneGeometry, ScalarField
from wakerom.fullorder import SnapshotSet
from wakerom.neuralnet import DenseNetwork, LossReport, forward, train

logger = logging.getLogger("wakerom.reduction")

ORTHONORMALITY_TOL = 1e-10
# eigenvalue ratio below which Y^T Y no longer separates the trailing mode
GRAM_RESOLUTION = 1e-10


class Reducer(Protocol):
    geometry: PlaneGeometry

    @property
    def latent_dim(self) -> int: ...

    def compress(self, values: np.ndarray) -> np.ndarray: ...

    def expand(self, coords: np.ndarray) -> np.ndarray: ...


def _check_rows(values, expected: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim not in (1, 2) or arr.shape[0] != expected:
        raise DimensionError(f"{what} must have {expected} rows, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class PodBasis:
    modes: np.ndarray
    singular_values: np.ndarray
    geometry: PlaneGeometry

    def __post_init__(self):
        modes = np.array(self.modes, dtype=float, ndmin=2)
        sv = np.array(self.singular_values, dtype=float).ravel()
        if modes.shape != (self.geometry.count, sv.size):
            raise DimensionError(
                f"modes {modes.shape} inconsistent with P={self.geometry.count}, L={sv.size}"
            )
        if np.any(np.diff(sv) > 0) or np.any(sv < 0):
            raise ReductionError("singular values must be nonnegative and descending")
        modes.setflags(write=False)
        sv.setflags(write=False)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "singular_values", sv)

    @property
    def latent_dim(self) -> int:
        return self.modes.shape[1]

    def orthonormality_error(self) -> float:
        gram = self.modes.T @ self.modes
        return float(np.max(np.abs(gram - np.eye(self.latent_dim))))

    def compress(self, values) -> np.ndarray:
        return self.modes.T @ _check_rows(values, self.geometry.count, "fields")

    def expand(self, coords) -> np.ndarray:
        return self.modes @ _check_rows(coords, self.latent_dim, "latent coordinates")


def _snapshot_matrix(snapshots: SnapshotSet, L: int) -> np.ndarray:
    if not 1 <= L <= min(snapshots.P, snapshots.M):
        raise ReductionError(
            f"latent dimension {L} outside [1, min(P={snapshots.P}, M={snapshots.M})]"
        )
    if not np.all(np.isfinite(snapshots.wakes)):
        raise ReductionError("snapshot matrix contains non-finite values")
    return snapshots.wakes


def _orient(modes: np.ndarray) -> np.ndarray:
    """Flip each mode so its largest-magnitude entry is positive."""
    pivot = modes[np.argmax(np.abs(modes), axis=0), np.arange(modes.shape[1])]
    return modes * np.where(pivot < 0, -1.0, 1.0)


def _checked(basis: PodBasis) -> PodBasis:
    err = basis.orthonormality_error()
    if err > ORTHONORMALITY_TOL:
        raise ReductionError(f"POD modes lost orthonormality (max |U^T U - I| = {err:.2e})")
    return basis


def pod_fit(snapshots: SnapshotSet, L: int) -> PodBasis:
    """Leading L left singular vectors of the thin SVD Y = U S V^T."""
    Y = _snapshot_matrix(snapshots, L)
    try:
        U, s, _ = scipy.linalg.svd(Y, full_matrices=False)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise ReductionError(f"SVD failed: {e}") from e
    return _checked(PodBasis(_orient(U[:, :L]), s[:L], snapshots.geometry))


def pod_fit_correlation(snapshots: SnapshotSet, L: int) -> PodBasis:
    """Method of snapshots: eigenpairs of the M x M correlation matrix Y^T Y."""
    Y = _snapshot_matrix(snapshots, L)
    try:
        eigvals, eigvecs = scipy.linalg.eigh(Y.T @ Y)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise ReductionError(f"eigen-solver failed: {e}") from e

    order = np.argsort(eigvals)[::-1][:L]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    k = int(np.sum(eigvals > GRAM_RESOLUTION * eigvals[0])) if eigvals[0] > 0 else 0

    sv = np.zeros(L)
    sv[:k] = np.sqrt(eigvals[:k])
    Q = np.empty((Y.shape[0], 0))
    if k:
        # one QR pass restores orthonormality lost to round-off in the Gram matrix
        Q, R = scipy.linalg.qr((Y @ eigvecs[:, :k]) / sv[:k], mode="economic")
        Q *= np.sign(np.diag(R))
    if k < L:
        logger.warning(
            f"correlation matrix resolves {k} of {L} modes (sigma ratio below "
            f"{np.sqrt(GRAM_RESOLUTION):.0e}); completing with an orthonormal complement"
        )
        Q = _complete_orthonormal(Q, L)
    return _checked(PodBasis(_orient(Q), sv, snapshots.geometry))


def _complete_orthonormal(Q: np.ndarray, L: int) -> np.ndarray:
    """Extend the orthonormal columns of Q to L columns with the unit vectors least in their span."""
    basis = Q
    while basis.shape[1] < L:
        residual = 1.0 - np.sum(basis**2, axis=1)
        e = np.zeros(basis.shape[0])
        e[int(np.argmax(residual))] = 1.0
        for _ in range(2):
            e -= basis @ (basis.T @ e)
        basis = np.column_stack([basis, e / np.linalg.norm(e)])
    return basis


def pod_compress(basis: PodBasis, field: ScalarField) -> np.ndarray:
    if field.geometry != basis.geometry:
        raise GeometryMismatchError("field and basis geometries differ")
    return basis.compress(field.values)


def pod_expand(basis: PodBasis, coords) -> ScalarField:
    return ScalarField(basis.geometry, basis.expand(np.asarray(coords, dtype=float).ravel()))


@dataclass(frozen=True, eq=False)
class Autoencoder:
    """Encoder (P -> L) and decoder (L -> P) with a scalar input standardization."""

    encoder: DenseNetwork
    decoder: DenseNetwork
    geometry: PlaneGeometry
    shift: float = 0.0
    scale: float = 1.0
    report: LossReport | None = None

    def __post_init__(self):
        if self.encoder.output_dim != self.decoder.input_dim:
            raise DimensionError(
                f"encoder emits {self.encoder.output_dim} latents, decoder takes {self.decoder.input_dim}"
            )
        if not (self.encoder.input_dim == self.decoder.output_dim == self.geometry.count):
            raise DimensionError("autoencoder width does not match the geometry")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def latent_dim(self) -> int:
        return self.encoder.output_dim

    @property
    def linear(self) -> bool:
        return all(a == "identity" for a in self.decoder.activations + self.encoder.activations)

    def compress(self, values) -> np.ndarray:
        arr = _check_rows(values, self.geometry.count, "fields")
        return forward(self.encoder, ((arr - self.shift) / self.scale).T).T

    def expand(self, coords) -> np.ndarray:
        arr = _check_rows(coords, self.latent_dim, "latent coordinates")
        return (forward(self.decoder, arr.T) * self.scale + self.shift).T

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
            "shift": self.shift,
            "scale": self.scale,
        }


def ae_fit(
    snapshots: SnapshotSet,
    L: int,
    architecture: AeConfig,
    cfg: TrainConfig | None = None,
    initial: Autoencoder | None = None,
) -> Autoencoder:
    """Train encoder and decoder jointly on reconstruction MSE plus weight decay."""
    Y = _snapshot_matrix(snapshots, L)
    cfg = cfg or architecture.train
    X = Y.T

    if initial is not None:
        if initial.latent_dim != L or initial.geometry != snapshots.geometry:
            raise DimensionError("initial autoencoder does not match L or geometry")
        shift, scale = initial.shift, initial.scale
        net = DenseNetwork(initial.encoder.layers + initial.decoder.layers)
        n_encoder = len(initial.encoder.layers)
    else:
        shift, scale = 0.0, 1.0
        if architecture.standardize:
            shift = float(np.mean(X))
            scale = float(np.std(X)) or 1.0
        P = snapshots.P
        sizes = [P, *architecture.encoder_hidden, L, *architecture.decoder_hidden, P]
        acts = (
            [architecture.activation] * len(architecture.encoder_hidden)
            + ["identity"]
            + [architecture.activation] * len(architecture.decoder_hidden)
            + ["identity"]
        )
        net = DenseNetwork.initialize(sizes, acts, cfg.rng_seed)
        n_encoder = len(architecture.encoder_hidden) + 1

    scaled = (X - shift) / scale
    trained, report = train(net, scaled, scaled, cfg)
    logger.info(
        f"Autoencoder L={L} trained: {report.epochs} epochs, mse={report.final_mse:.3e} "
        f"({report.stop_reason})"
    )
    encoder, decoder = trained.split(n_encoder)
    return Autoencoder(encoder, decoder, snapshots.geometry, shift, scale, report)


def ae_modes(ae: Autoencoder) -> list[ScalarField]:
    """D(e_k) - D(0) for each latent direction; defined only for linear decoders."""
    if not ae.linear:
        raise ReductionError("modes are undefined for a nonlinear autoencoder")
    L = ae.latent_dim
    columns = ae.expand(np.eye(L)) - ae.expand(np.zeros((L, 1)))
    return [ScalarField(ae.geometry, columns[:, k]) for k in range(L)]


def reconstruct(reducer: Reducer, values) -> np.ndarray:
    return reducer.expand(reducer.compress(values))


def save_pod(basis: PodBasis, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = ",".join(f"mode_{k + 1}" for k in range(basis.latent_dim))
    np.savetxt(
        directory / "modes.csv", basis.modes, fmt="%.17g", delimiter=",", header=header,
        comments="",
    )
    (directory / "pod.json").write_text(
        json.dumps({"singular_values": basis.singular_values.tolist()}, indent=2) + "\n",
        encoding="utf-8",
    )


def load_pod(directory: Path, geometry: PlaneGeometry) -> PodBasis:
    directory = Path(directory)
    modes = np.loadtxt(directory / "modes.csv", delimiter=",", skiprows=1, ndmin=2)
    sv = json.loads((directory / "pod.json").read_text(encoding="utf-8"))["singular_values"]
    return PodBasis(modes, sv, geometry)


def save_autoencoder(ae: Autoencoder, path: Path) -> None:
    Path(path).write_text(json.dumps(ae.to_dict()), encoding="utf-8")


def load_autoencoder(path: Path, geometry: PlaneGeometry) -> Autoencoder:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return Autoencoder(
        DenseNetwork.from_dict(data["encoder"]),
        DenseNetwork.from_dict(data["decoder"]),
        geometry,
        float(data["shift"]),
        float(data["scale"]),
    )
