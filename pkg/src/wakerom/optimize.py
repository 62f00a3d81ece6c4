"""Parameter recovery: (mu + lambda) genetic algorithm and forward-difference BFGS."""
import csv
import json
import logging
import warnings
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.optimize import line_search

from wakerom.boundary import Bounds
from wakerom.config import GaConfig
from wakerom.errors import DimensionError, FitnessError
from wakerom.rom import RomVariant

logger = logging.getLogger("wakerom.optimize")

Objective = Callable[[np.ndarray], float]


class RomFitness:
    """Relative wake mismatch ||R v~(mu) - d|| / ||d||.

    `target` lives in the restricted space when a restriction R is given
    (e.g. observation values), otherwise it is a full wake.
    """

    def __init__(self, rom: RomVariant, target, restriction: sparse.spmatrix | None = None):
        self.rom = rom
        self.restriction = restriction
        self.target = np.asarray(target, dtype=float).ravel()
        expected = restriction.shape[0] if restriction is not None else rom.geometry.count
        if self.target.size != expected:
            raise DimensionError(f"target has {self.target.size} values, expected {expected}")
        self.target_norm = float(np.linalg.norm(self.target))
        if self.target_norm == 0.0:
            raise ValueError("target has zero norm")

    @property
    def dim(self) -> int:
        return self.rom.regressor.p

    def __call__(self, mu) -> float:
        wake = self.rom.predict_values(np.asarray(mu, dtype=float).ravel())
        if self.restriction is not None:
            wake = self.restriction @ wake
        return float(np.linalg.norm(wake - self.target) / self.target_norm)


@dataclass
class OptResult:
    method: str
    best_mu: np.ndarray
    best_fitness: float
    trace: list[float]
    evaluations: dict[str, int]
    stalled: bool = False
    message: str = ""
    iterations: int = 0
    population: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "best_mu": self.best_mu.tolist(),
            "best_fitness": self.best_fitness,
            "trace": list(self.trace),
            "evaluations": dict(self.evaluations),
            "iterations": self.iterations,
            "stalled": self.stalled,
            "message": self.message,
        }

    def write_json(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def write_trace_csv(self, path: Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["generation", "best_fitness"])
            for gen, value in enumerate(self.trace):
                writer.writerow([gen, repr(value)])


def _evaluate(f: Objective, population: np.ndarray, workers: int) -> np.ndarray:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = np.fromiter(pool.map(f, population), dtype=float, count=len(population))
    else:
        values = np.array([f(ind) for ind in population], dtype=float)
    bad = ~np.isfinite(values)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise FitnessError(population[i].tolist(), float(values[i]))
    return values


def blend_crossover(a, b, alpha: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per gene, gamma ~ U(-alpha, 1 + alpha); children a + gamma (b - a) and b - gamma (b - a)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"parents differ in length: {a.size} vs {b.size}")
    gamma = (1.0 + 2.0 * alpha) * rng.random(a.shape) - alpha
    delta = b - a
    return a + gamma * delta, b - gamma * delta


def gaussian_mutate(
    v,
    per_gene_prob: float,
    std: float,
    rng: np.random.Generator,
    bounds: Bounds | None = None,
) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    mask = rng.random(v.shape) < per_gene_prob
    noise = rng.normal(0.0, std, v.shape)
    mutated = v + np.where(mask, noise, 0.0)
    return bounds.clip(mutated) if bounds is not None else mutated


def ga_minimize(
    f: Objective,
    cfg: GaConfig,
    initial_population: np.ndarray | None = None,
    workers: int = 1,
) -> OptResult:
    """Elitist (mu + lambda) evolution; returns the best individual ever evaluated.

    Each generation draws from its own child of the seed sequence, so results
    do not depend on how fitness evaluations are scheduled.
    """
    bounds = Bounds([lo for lo, _ in cfg.bounds], [hi for _, hi in cfg.bounds])
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.generations + 1)

    if initial_population is None:
        rng = np.random.default_rng(seeds[0])
        population = rng.uniform(bounds.lower, bounds.upper, size=(cfg.pop_init, bounds.dim))
    else:
        population = np.array(initial_population, dtype=float, ndmin=2)
        if population.shape[1] != bounds.dim:
            raise DimensionError(f"initial population has {population.shape[1]} genes, bounds {bounds.dim}")
    fitness = _evaluate(f, population, workers)
    n_evals = len(population)

    best = int(np.argmin(fitness))
    best_mu, best_fitness = population[best].copy(), float(fitness[best])
    trace = [best_fitness]
    logger.info(f"GA generation 0: best fitness {best_fitness:.6e}")

    for gen in range(1, cfg.generations + 1):
        rng = np.random.default_rng(seeds[gen])
        offspring = np.empty((cfg.lambda_offspring, bounds.dim))
        for k in range(cfg.lambda_offspring):
            u = rng.random()
            if u < cfg.cx_prob and len(population) > 1:
                i, j = rng.choice(len(population), size=2, replace=False)
                child, _ = blend_crossover(population[i], population[j], cfg.blend_alpha, rng)
            elif u < cfg.cx_prob + cfg.mut_prob:
                i = rng.integers(len(population))
                child = gaussian_mutate(
                    population[i], cfg.mutation_gene_prob, cfg.mutation_std, rng
                )
            else:
                child = population[rng.integers(len(population))].copy()
            offspring[k] = bounds.clip(child)

        offspring_fitness = _evaluate(f, offspring, workers)
        n_evals += len(offspring)

        pool = np.vstack([population, offspring])
        pool_fitness = np.concatenate([fitness, offspring_fitness])
        keep = np.argsort(pool_fitness, kind="stable")[: cfg.mu_select]
        population, fitness = pool[keep], pool_fitness[keep]

        if fitness[0] < best_fitness:
            best_mu, best_fitness = population[0].copy(), float(fitness[0])
        trace.append(best_fitness)
        logger.info(f"GA generation {gen}: best fitness {best_fitness:.6e}")

    return OptResult(
        method="ga",
        best_mu=best_mu,
        best_fitness=best_fitness,
        trace=trace,
        evaluations={"function": n_evals, "gradient": 0},
        iterations=cfg.generations,
        population=population,
    )


class _Counted:
    """Objective with forward-difference gradient and evaluation counters."""

    def __init__(self, f: Objective, step: float):
        self.f = f
        self.step = step
        self.n_function = 0
        self.n_gradient = 0
        self._last: tuple[np.ndarray, np.ndarray] | None = None

    def value(self, x) -> float:
        self.n_function += 1
        return float(self.f(np.asarray(x, dtype=float)))

    def gradient(self, x, fx: float | None = None) -> np.ndarray:
        """(f(x + h e_i) - f(x)) / h with the nominal step h, never adjusted.

        The line search already differentiates at the point it accepts, so a
        repeated request for the same x is served from the last result.
        """
        x = np.asarray(x, dtype=float)
        if self._last is not None and np.array_equal(self._last[0], x):
            return self._last[1].copy()
        self.n_gradient += 1
        if fx is None:
            fx = self.value(x)
        grad = np.empty_like(x)
        for i in range(x.size):
            shifted = x.copy()
            shifted[i] += self.step
            grad[i] = (self.value(shifted) - fx) / self.step
        self._last = (x.copy(), grad.copy())
        return grad


def bfgs_minimize(
    f: Objective,
    x0,
    fd_step: float = 1e-7,
    max_iter: int = 200,
    gtol: float = 1e-6,
) -> OptResult:
    """Quasi-Newton minimization with forward-difference gradients and Wolfe line search."""
    obj = _Counted(f, fd_step)
    x = np.array(x0, dtype=float).ravel()
    fx = obj.value(x)
    g = obj.gradient(x, fx)
    H = np.eye(x.size)
    trace = [fx]
    message = "maximum iterations reached"
    stalled = False
    iterations = 0

    while iterations < max_iter:
        if not np.all(np.isfinite(g)):
            stalled, message = True, "gradient is not finite"
            break
        if np.max(np.abs(g)) <= gtol:
            message = "gradient below tolerance"
            stalled = iterations == 0
            if stalled:
                message = "gradient vanished at the start point"
            break

        direction = -H @ g
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            alpha, _, _, f_new, _, _ = line_search(
                obj.value, obj.gradient, x, direction, gfk=g, old_fval=fx
            )
        if alpha is None or f_new is None:
            stalled, message = True, "line search failed"
            break

        x_new = x + alpha * direction
        g_new = obj.gradient(x_new, f_new)
        s, y = x_new - x, g_new - g
        sy = float(y @ s)
        if sy > 0:
            rho = 1.0 / sy
            I = np.eye(x.size)
            H = (I - rho * np.outer(s, y)) @ H @ (I - rho * np.outer(y, s)) + rho * np.outer(s, s)
        x, fx, g = x_new, float(f_new), g_new
        trace.append(fx)
        iterations += 1

    logger.info(
        f"BFGS from {np.round(np.asarray(x0, dtype=float), 4).tolist()}: f={fx:.6e} after "
        f"{iterations} iterations, {obj.n_gradient} gradients ({message})"
    )
    return OptResult(
        method="bfgs",
        best_mu=x,
        best_fitness=fx,
        trace=trace,
        evaluations={"function": obj.n_function, "gradient": obj.n_gradient},
        stalled=stalled,
        message=message,
        iterations=iterations,
    )


def bfgs_multistart(
    f: Objective,
    starts: Sequence,
    fd_step: float = 1e-7,
    max_iter: int = 200,
    gtol: float = 1e-6,
) -> list[OptResult]:
    return [bfgs_minimize(f, x0, fd_step, max_iter, gtol) for x0 in starts]


def distinct_minima(results: Sequence[OptResult], tol: float = 1e-3) -> int:
    """Number of clusters among final points, merging points closer than tol."""
    reps: list[np.ndarray] = []
    for res in results:
        if all(np.linalg.norm(res.best_mu - r) > tol for r in reps):
            reps.append(res.best_mu)
    return len(reps)
