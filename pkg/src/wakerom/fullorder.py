"""Full-order model abstraction: snapshot providers and the snapshot corpus on disk."""
import json
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from wakerom.boundary import PerturbationScheme, inlet_from_params, stack_params
from wakerom.config import ProviderConfig, Settings
from wakerom.errors import (
    DimensionError,
    GeometryMismatchError,
    ProviderError,
    SnapshotFormatError,
    WakeRomError,
)
from wakerom.field import PlaneGeometry, ScalarField
from wakerom.neuralnet import DenseNetwork
from wakerom.solver_client import SolverClient, extract_error

logger = logging.getLogger("wakerom.fullorder")


class SnapshotProvider(Protocol):
    geometry: PlaneGeometry

    def solve(self, inlet: ScalarField) -> ScalarField: ...

    def describe(self) -> dict: ...

    def close(self) -> None: ...


def gaussian_kernel(
    geometry: PlaneGeometry, sigma: float, cutoff_sigmas: float | None = 4.0
) -> sparse.csr_matrix:
    """Row-normalized Gaussian smoothing weights between geometry points."""
    pts = geometry.cartesian()
    n = geometry.count
    if cutoff_sigmas is None:
        weights = np.exp(-cdist(pts, pts, "sqeuclidean") / (2.0 * sigma**2))
        weights /= weights.sum(axis=1, keepdims=True)
        return sparse.csr_matrix(weights)

    tree = cKDTree(pts)
    neighbours = tree.query_ball_point(pts, r=cutoff_sigmas * sigma, return_sorted=True)
    counts = np.fromiter((len(nb) for nb in neighbours), dtype=int, count=n)
    rows = np.repeat(np.arange(n), counts)
    cols = np.concatenate([np.asarray(nb, dtype=int) for nb in neighbours])
    w = np.exp(-np.sum((pts[rows] - pts[cols]) ** 2, axis=1) / (2.0 * sigma**2))
    w /= np.bincount(rows, weights=w, minlength=n)[rows]
    return sparse.csr_matrix((w, (rows, cols)), shape=(n, n))


@dataclass(frozen=True, eq=False)
class SyntheticTransport:
    """Desk-scale stand-in for the CFD solve: attenuated Gaussian smoothing of the inlet.

    With `saturation` set, the smoothed field passes through s * tanh(u / s)
    before attenuation, which makes the operator nonlinear.
    """

    geometry: PlaneGeometry
    blur_radius: float
    attenuation: float = 1.0
    saturation: float | None = None
    cutoff_sigmas: float | None = 4.0
    kernel: sparse.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        if self.blur_radius <= 0:
            raise ValueError("blur_radius must be positive")
        if not 0 < self.attenuation <= 1:
            raise ValueError("attenuation must lie in (0, 1]")
        kernel = gaussian_kernel(self.geometry, self.blur_radius, self.cutoff_sigmas)
        object.__setattr__(self, "kernel", kernel)

    def solve(self, inlet: ScalarField) -> ScalarField:
        if inlet.geometry != self.geometry:
            raise GeometryMismatchError("inlet is not defined on the provider geometry")
        smoothed = self.kernel @ inlet.values
        if self.saturation is not None:
            smoothed = self.saturation * np.tanh(smoothed / self.saturation)
        return ScalarField(self.geometry, self.attenuation * smoothed)

    def describe(self) -> dict:
        return {
            "kind": "synthetic",
            "blur_radius": self.blur_radius,
            "attenuation": self.attenuation,
            "saturation": self.saturation,
            "cutoff_sigmas": self.cutoff_sigmas,
        }

    def close(self) -> None:
        pass


class RemoteSolverProvider:
    """Delegates each solve to an external solver service over HTTP; owns the client until `close`."""

    def __init__(self, client: SolverClient, geometry: PlaneGeometry, path: str = "/solve"):
        self.client = client
        self.geometry = geometry
        self.path = path

    def solve(self, inlet: ScalarField) -> ScalarField:
        if inlet.geometry != self.geometry:
            raise GeometryMismatchError("inlet is not defined on the provider geometry")
        payload = {
            "r": self.geometry.r.tolist(),
            "theta": self.geometry.theta.tolist(),
            "inlet": inlet.values.tolist(),
        }
        response = self.client.post(self.path, json=payload)
        if response.status_code != 200:
            raise WakeRomError(extract_error(response))
        try:
            wake = response.json()["wake"]
        except (KeyError, ValueError) as e:
            raise WakeRomError(f"malformed solver response: {e}") from e
        return ScalarField(self.geometry, wake)

    def describe(self) -> dict:
        return {"kind": "remote", "url": self.client.describe()}

    def close(self) -> None:
        self.client.close()


def provider_from_config(
    cfg: ProviderConfig, geometry: PlaneGeometry, settings: Settings
) -> SnapshotProvider:
    if cfg.kind == "synthetic":
        return SyntheticTransport(
            geometry=geometry,
            blur_radius=cfg.blur_radius,
            attenuation=cfg.attenuation,
            saturation=cfg.saturation,
            cutoff_sigmas=cfg.cutoff_sigmas,
        )
    if cfg.kind == "remote":
        if not settings.solver_url:
            raise WakeRomError("remote provider needs WAKEROM_SOLVER_URL")
        client = SolverClient.connect(
            settings.solver_url, settings.solver_token, settings.solver_timeout
        )
        return RemoteSolverProvider(client, geometry)
    raise WakeRomError(f"provider kind '{cfg.kind}' does not solve inlets")


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """M parameter vectors and their wakes; wakes are the columns of Y (P x M)."""

    params: np.ndarray
    wakes: np.ndarray
    geometry: PlaneGeometry
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        params = np.array(self.params, dtype=float, ndmin=2)
        wakes = np.array(self.wakes, dtype=float, ndmin=2)
        if params.shape[0] != wakes.shape[1]:
            raise DimensionError(
                f"count mismatch: {params.shape[0]} parameter rows, {wakes.shape[1]} wakes"
            )
        if wakes.shape[0] != self.geometry.count:
            raise GeometryMismatchError(
                f"wakes have {wakes.shape[0]} points, geometry has {self.geometry.count}"
            )
        params.setflags(write=False)
        wakes.setflags(write=False)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "wakes", wakes)

    @property
    def M(self) -> int:
        return self.params.shape[0]

    @property
    def p(self) -> int:
        return self.params.shape[1]

    @property
    def P(self) -> int:
        return self.wakes.shape[0]

    def wake(self, i: int) -> ScalarField:
        return ScalarField(self.geometry, self.wakes[:, i])

    def subset(self, indices: Sequence[int]) -> "SnapshotSet":
        idx = np.asarray(indices, dtype=int)
        return SnapshotSet(self.params[idx], self.wakes[:, idx], self.geometry, dict(self.meta))


def generate_snapshots(
    net: DenseNetwork,
    scheme: PerturbationScheme,
    mu_list: Sequence,
    provider: SnapshotProvider,
    workers: int = 1,
    meta: dict | None = None,
) -> SnapshotSet:
    """Solve the provider for the inlet produced by every mu, keeping order."""

    def solve_one(i: int) -> np.ndarray:
        try:
            inlet = inlet_from_params(net, scheme, mu_list[i], provider.geometry)
            return provider.solve(inlet).values
        except Exception as e:
            raise ProviderError(i, str(e)) from e

    logger.info(f"Solving {len(mu_list)} snapshots with {workers} worker(s)")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        columns = list(pool.map(solve_one, range(len(mu_list))))

    info = {"provider": provider.describe(), **(meta or {})}
    return SnapshotSet(stack_params(mu_list), np.column_stack(columns), provider.geometry, info)


def save_snapshots(snapshots: SnapshotSet, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mu_header = ",".join(f"mu_{k + 1}" for k in range(snapshots.p))
    np.savetxt(
        directory / "params.csv", snapshots.params, fmt="%.17g", delimiter=",",
        header=mu_header, comments="",
    )
    wake_header = ",".join(["r", "theta"] + [f"snap_{i + 1}" for i in range(snapshots.M)])
    table = np.column_stack([snapshots.geometry.r, snapshots.geometry.theta, snapshots.wakes])
    np.savetxt(
        directory / "wakes.csv", table, fmt="%.17g", delimiter=",",
        header=wake_header, comments="",
    )
    meta = {**snapshots.meta, "M": snapshots.M, "p": snapshots.p, "P": snapshots.P}
    (directory / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_csv(path: Path) -> tuple[list[str], np.ndarray]:
    try:
        with path.open(encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except (OSError, ValueError) as e:
        raise SnapshotFormatError(f"{path}: {e}") from e
    if data.shape[1] != len(header):
        raise SnapshotFormatError(
            f"{path}: header names {len(header)} columns, rows have {data.shape[1]}"
        )
    return header, data


def load_snapshots(directory: Path, geometry: PlaneGeometry | None = None) -> SnapshotSet:
    directory = Path(directory)
    _, params = _load_csv(directory / "params.csv")
    header, table = _load_csv(directory / "wakes.csv")
    if header[:2] != ["r", "theta"]:
        raise SnapshotFormatError(f"{directory / 'wakes.csv'}: first columns must be r,theta")

    meta: dict = {}
    meta_path = directory / "meta.json"
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except ValueError as e:
            raise SnapshotFormatError(f"{meta_path}: {e}") from e

    wakes = table[:, 2:]
    if params.shape[0] != wakes.shape[1]:
        raise SnapshotFormatError(
            f"count mismatch: {params.shape[0]} parameter rows, {wakes.shape[1]} wake columns"
        )
    for key, actual in (("M", params.shape[0]), ("p", params.shape[1]), ("P", wakes.shape[0])):
        if key in meta and meta[key] != actual:
            raise SnapshotFormatError(f"meta.json records {key}={meta[key]}, files hold {actual}")

    stored = PlaneGeometry(r=table[:, 0], theta=table[:, 1])
    if geometry is not None and stored != geometry:
        raise GeometryMismatchError(f"{directory}: snapshot geometry differs from the case geometry")
    for key in ("M", "p", "P"):
        meta.pop(key, None)
    return SnapshotSet(params, wakes, geometry or stored, meta)
