"""ROM variants (reducer + regressor) and the training-size sensitivity protocol."""
import csv
import json
import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from wakerom.config import ALL_VARIANTS, RomConfig
from wakerom.errors import ConfigError, FitError, ReductionError, WakeRomError
from wakerom.field import PlaneGeometry, ScalarField, relative_error
from wakerom.fullorder import SnapshotSet
from wakerom.reduction import (
    Autoencoder,
    PodBasis,
    Reducer,
    ae_fit,
    load_autoencoder,
    load_pod,
    pod_fit,
    pod_fit_correlation,
    save_autoencoder,
    save_pod,
)
from wakerom.regression import (
    AnnRegressor,
    RbfModel,
    ann_fit_from_config,
    load_regressor,
    rbf_fit,
    save_regressor,
    tune_epsilon,
)

logger = logging.getLogger("wakerom.rom")

Regressor = RbfModel | AnnRegressor


@dataclass(frozen=True, eq=False)
class RomVariant:
    """predict(mu) = reducer.expand(regressor.predict(mu))."""

    name: str
    reducer: Reducer
    regressor: Regressor

    @property
    def geometry(self) -> PlaneGeometry:
        return self.reducer.geometry

    def predict_values(self, mu) -> np.ndarray:
        """(P,) for one mu, (P, n) for a batch of n rows."""
        latents = self.regressor.predict(mu)
        return self.reducer.expand(latents.T if latents.ndim == 2 else latents)

    def predict(self, mu) -> ScalarField:
        return ScalarField(self.geometry, self.predict_values(np.ravel(mu)))


def _fit_reducer(family: str, train_set: SnapshotSet, L: int, cfg: RomConfig, seed: int) -> Reducer:
    if family == "POD":
        fit = pod_fit_correlation if cfg.pod_method == "correlation" else pod_fit
        return fit(train_set, L)
    ae_cfg = cfg.linear_ae if family == "linAE" else cfg.nonlinear_ae
    return ae_fit(train_set, L, ae_cfg, ae_cfg.train.model_copy(update={"rng_seed": seed}))


def _fit_regressor(name: str, params: np.ndarray, latents: np.ndarray, cfg: RomConfig, seed: int) -> Regressor:
    family, method = name.split("-")
    if method == "RBF":
        eps = cfg.rbf_epsilon
        if cfg.rbf_tune and params.shape[0] > 2:
            eps = tune_epsilon(params, latents, cfg.rbf_epsilon_candidates)
        return rbf_fit(params, latents, eps)
    ann_cfg = {"POD": cfg.ann_pod, "linAE": cfg.ann_linear_ae, "nonlinAE": cfg.ann_nonlinear_ae}[family]
    return ann_fit_from_config(params, latents, ann_cfg, seed + 1)


def rom_fit(name: str, train_set: SnapshotSet, L: int, cfg: RomConfig, rng_seed: int = 0) -> RomVariant:
    """Offline stage: fit the reducer on the wakes, then regress mu -> latents."""
    if name not in ALL_VARIANTS:
        raise FitError(name, ValueError(f"unknown variant, expected one of {ALL_VARIANTS}"))
    try:
        if train_set.M < L:
            raise ReductionError(f"{train_set.M} training snapshots cannot support L={L}")
        reducer = _fit_reducer(name.split("-")[0], train_set, L, cfg, rng_seed)
        latents = reducer.compress(train_set.wakes).T
        regressor = _fit_regressor(name, train_set.params, latents, cfg, rng_seed)
    except WakeRomError as e:
        raise FitError(name, e) from e
    return RomVariant(name, reducer, regressor)


def rom_predict(rom: RomVariant, mu) -> ScalarField:
    return rom.predict(mu)


def mean_relative_error(
    rom: RomVariant, snapshots: SnapshotSet, restriction: sparse.spmatrix | None = None
) -> float:
    """Mean over snapshots of ||v~_i - v_i|| / ||v_i||."""
    predicted = rom.predict_values(snapshots.params)
    errors = [
        relative_error(predicted[:, i], snapshots.wakes[:, i], restriction)
        for i in range(snapshots.M)
    ]
    return float(np.mean(errors))


@dataclass(frozen=True)
class SensitivityCell:
    variant: str
    M: int
    run: int
    train_error: float
    test_error: float
    error: str | None = None


@dataclass(frozen=True)
class SensitivityAggregate:
    variant: str
    M: int
    runs_ok: int
    train_mean: float
    train_min: float
    train_max: float
    test_mean: float
    test_min: float
    test_max: float


@dataclass
class SensitivityReport:
    cells: list[SensitivityCell]

    def aggregate(self) -> list[SensitivityAggregate]:
        groups: dict[tuple[str, int], list[SensitivityCell]] = {}
        for cell in self.cells:
            groups.setdefault((cell.variant, cell.M), []).append(cell)
        rows = []
        for (variant, M), cells in groups.items():
            ok = [c for c in cells if c.error is None]
            train = np.array([c.train_error for c in ok]) if ok else np.array([math.nan])
            test = np.array([c.test_error for c in ok]) if ok else np.array([math.nan])
            rows.append(
                SensitivityAggregate(
                    variant, M, len(ok),
                    float(train.mean()), float(train.min()), float(train.max()),
                    float(test.mean()), float(test.min()), float(test.max()),
                )
            )
        return rows

    def failures(self) -> list[SensitivityCell]:
        return [c for c in self.cells if c.error is not None]

    def write_csv(self, cells_path: Path, summary_path: Path) -> None:
        with Path(cells_path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["variant", "M", "run", "train_err", "test_err", "error"])
            for c in self.cells:
                writer.writerow(
                    [c.variant, c.M, c.run, repr(c.train_error), repr(c.test_error), c.error or ""]
                )
        with Path(summary_path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["variant", "M", "runs_ok", "train_mean", "train_min", "train_max",
                 "test_mean", "test_min", "test_max"]
            )
            for a in self.aggregate():
                writer.writerow(
                    [a.variant, a.M, a.runs_ok]
                    + [repr(v) for v in (a.train_mean, a.train_min, a.train_max,
                                         a.test_mean, a.test_min, a.test_max)]
                )

    @classmethod
    def read_summary(cls, summary_path: Path) -> list[SensitivityAggregate]:
        with Path(summary_path).open(encoding="utf-8") as fh:
            return [
                SensitivityAggregate(
                    row["variant"], int(row["M"]), int(row["runs_ok"]),
                    *(float(row[k]) for k in ("train_mean", "train_min", "train_max",
                                              "test_mean", "test_min", "test_max")),
                )
                for row in csv.DictReader(fh)
            ]


def split_pool(pool_size: int, n_test: int, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed test indices and the training order; training sets are its prefixes."""
    order = np.random.default_rng(rng_seed).permutation(pool_size)
    return order[:n_test], order[n_test:]


def cell_seed(rng_seed: int, variant: str, M: int, run: int) -> int:
    seq = np.random.SeedSequence([rng_seed, ALL_VARIANTS.index(variant), M, run])
    return int(seq.generate_state(1)[0])


def sensitivity_analysis(
    variants: Sequence[str],
    pool: SnapshotSet,
    m_list: Sequence[int],
    L: int,
    runs: int,
    rng_seed: int,
    cfg: RomConfig,
    restriction: sparse.spmatrix | None = None,
    n_test: int = 10,
    workers: int = 1,
) -> SensitivityReport:
    """Train/test errors for every (variant, M, run); failed cells are recorded, not raised."""
    needed = max(m_list) + n_test
    if pool.M < needed:
        raise ConfigError(f"snapshot pool of {pool.M} is below max(M_list) + n_test = {needed}")

    test_idx, train_order = split_pool(pool.M, n_test, rng_seed)
    test_set = pool.subset(test_idx)
    jobs = [(v, M, run) for M in sorted(m_list) for v in variants for run in range(runs)]

    def run_cell(job: tuple[str, int, int]) -> SensitivityCell:
        variant, M, run = job
        train_set = pool.subset(train_order[:M])
        try:
            rom = rom_fit(variant, train_set, L, cfg, cell_seed(rng_seed, variant, M, run))
            train_err = mean_relative_error(rom, train_set, restriction)
            test_err = mean_relative_error(rom, test_set, restriction)
        except (WakeRomError, ValueError) as e:
            logger.warning(f"{variant} M={M} run={run} failed: {e}")
            return SensitivityCell(variant, M, run, math.nan, math.nan, str(e))
        logger.info(f"{variant} M={M} run={run}: train={train_err:.4e} test={test_err:.4e}")
        return SensitivityCell(variant, M, run, train_err, test_err)

    logger.info(f"Sensitivity grid: {len(jobs)} cells, {workers} worker(s)")
    with ThreadPoolExecutor(max_workers=workers) as pool_exec:
        cells = list(pool_exec.map(run_cell, jobs))
    return SensitivityReport(cells)


def best_variant(aggregates: Sequence[SensitivityAggregate]) -> str:
    """Lowest mean test error at the largest training size that has results."""
    usable = [a for a in aggregates if a.runs_ok > 0]
    if not usable:
        raise WakeRomError("no successful sensitivity cells to choose a variant from")
    largest = max(a.M for a in usable)
    return min((a for a in usable if a.M == largest), key=lambda a: a.test_mean).variant


def save_rom(rom: RomVariant, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(rom.reducer, PodBasis):
        kind = "pod"
        save_pod(rom.reducer, directory)
    elif isinstance(rom.reducer, Autoencoder):
        kind = "autoencoder"
        save_autoencoder(rom.reducer, directory / "autoencoder.json")
    else:
        raise WakeRomError(f"cannot persist reducer {type(rom.reducer).__name__}")
    save_regressor(rom.regressor, directory / "regressor.json")
    (directory / "rom.json").write_text(
        json.dumps({"variant": rom.name, "reducer": kind, "latent_dim": rom.reducer.latent_dim},
                   indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_rom(directory: Path, geometry: PlaneGeometry) -> RomVariant:
    directory = Path(directory)
    try:
        info = json.loads((directory / "rom.json").read_text(encoding="utf-8"))
        if info["reducer"] == "pod":
            reducer: Reducer = load_pod(directory, geometry)
        else:
            reducer = load_autoencoder(directory / "autoencoder.json", geometry)
        regressor = load_regressor(directory / "regressor.json")
    except (OSError, KeyError, ValueError) as e:
        raise WakeRomError(f"cannot load ROM from {directory}: {e}") from e
    return RomVariant(info["variant"], reducer, regressor)
