"""Pipeline stages: parametrize -> snapshots -> rom -> optimize, with file artifacts.

Every stage reads its inputs from, and writes its outputs to, the run directory,
so stages can be rerun independently.
"""
import csv
import json
import logging
from contextlib import closing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from wakerom.boundary import Bounds, PerturbationScheme, inlet_from_params, sample_param_vectors
from wakerom.config import PipelineConfig, Settings, get_settings
from wakerom.errors import WakeRomError
from wakerom.field import (
    ObservationSet,
    PlaneGeometry,
    ScalarField,
    field_relative_error,
    make_observation_grid,
    observation_operator,
    read_observations_csv,
    sample_field,
    target_pointwise,
    target_smooth_xy,
    write_field_csv,
    write_observations_csv,
)
from wakerom.formatting import (
    format_fit_report,
    format_opt_result,
    format_sensitivity_table,
    format_snapshot_summary,
)
from wakerom.fullorder import (
    generate_snapshots,
    load_snapshots,
    provider_from_config,
    save_snapshots,
)
from wakerom.neuralnet import (
    ContinuityPenalty,
    DenseNetwork,
    equispaced_radii,
    forward,
    load_network,
    save_network,
    train,
)
from wakerom.optimize import (
    OptResult,
    RomFitness,
    bfgs_multistart,
    distinct_minima,
    ga_minimize,
)
from wakerom.rom import (
    RomVariant,
    SensitivityReport,
    best_variant,
    load_rom,
    rom_fit,
    save_rom,
    sensitivity_analysis,
    split_pool,
)

logger = logging.getLogger("wakerom.pipeline")

STAGES = ("parametrize", "snapshots", "rom", "optimize")
_STAGE_TAGS = {name: i for i, name in enumerate(STAGES)}


def stage_seed(global_seed: int, stage: str, local: int = 0) -> int:
    """Independent, reproducible seed per stage derived from the global seed."""
    seq = np.random.SeedSequence([global_seed, _STAGE_TAGS[stage], local])
    return int(seq.generate_state(1)[0])


@dataclass(frozen=True)
class RunLayout:
    root: Path

    @property
    def parametrize(self) -> Path:
        return self.root / "parametrize"

    @property
    def network(self) -> Path:
        return self.parametrize / "network.json"

    @property
    def snapshots(self) -> Path:
        return self.root / "snapshots"

    @property
    def rom(self) -> Path:
        return self.root / "rom"

    @property
    def model(self) -> Path:
        return self.rom / "model"

    @property
    def optimize(self) -> Path:
        return self.root / "optimize"

    @property
    def log(self) -> Path:
        return self.root / "pipeline.log"


@dataclass
class CaseData:
    geometry: PlaneGeometry
    target: ScalarField | None
    observations: ObservationSet | None
    restriction: sparse.csr_matrix | None


@dataclass
class StageResult:
    stage: str
    summary: str
    artifacts: list[Path] = field(default_factory=list)


def build_case(cfg: PipelineConfig) -> CaseData:
    g = cfg.case.geometry
    geometry = PlaneGeometry.polar_disc(g.radius, g.n_radial, g.n_angular)
    target = None
    observations = None
    if cfg.case.kind == "smooth":
        target = sample_field(geometry, target_smooth_xy)
    elif cfg.case.kind == "pointwise":
        observations = make_observation_grid(cfg.case.side, cfg.case.n_per_axis, target_pointwise)
    else:
        observations = read_observations_csv(cfg.case.observations_path)

    restriction = None
    if cfg.case.restrict_to_observations:
        restriction = observation_operator(geometry, observations)
    return CaseData(geometry, target, observations, restriction)


def _write_json(path: Path, data: dict) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _require(path: Path, stage: str) -> None:
    if not path.exists():
        raise WakeRomError(f"{path} is missing; run the '{stage}' stage first")


def _load_scheme(cfg: PipelineConfig, layout: RunLayout) -> tuple[DenseNetwork, PerturbationScheme, Bounds]:
    _require(layout.network, "parametrize")
    net = load_network(layout.network)
    scheme = PerturbationScheme.from_config(cfg.perturbation, net)
    bounds = Bounds.uniform(scheme.p, *cfg.perturbation.bounds)
    return net, scheme, bounds


def cmd_parametrize(cfg: PipelineConfig, out_dir: Path) -> StageResult:
    """Train the boundary network on the case target and persist it."""
    layout = RunLayout(Path(out_dir))
    layout.parametrize.mkdir(parents=True, exist_ok=True)
    case = build_case(cfg)
    pcfg = cfg.parametrization

    if case.target is not None:
        inputs, targets = case.geometry.polar(), case.target.values[:, None]
    else:
        obs = case.observations
        inputs = PlaneGeometry.from_cartesian(obs.x, obs.y).polar()
        targets = obs.values[:, None]
        write_observations_csv(obs, layout.parametrize / "observations.csv")

    seed = stage_seed(cfg.rng_seed, "parametrize", pcfg.train.rng_seed)
    net = DenseNetwork.build(
        2, pcfg.hidden, 1, pcfg.activation, pcfg.output_activation, rng_seed=seed
    )
    penalty = None
    if pcfg.train.continuity_weight > 0 and pcfg.continuity_samples > 0:
        penalty = ContinuityPenalty(
            equispaced_radii(cfg.case.geometry.radius, pcfg.continuity_samples)
        )

    logger.info(f"Training parametrization network {net.layer_sizes} on {len(inputs)} points")
    net, report = train(net, inputs, targets, pcfg.train, extra_loss=penalty)
    if case.target is not None:
        fitted = ScalarField(case.geometry, forward(net, case.geometry.polar())[:, 0])
        report.extra["relative_error"] = field_relative_error(fitted, case.target)

    save_network(net, layout.network)
    loss_path = layout.parametrize / "loss.csv"
    with loss_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        writer.writerows([i, repr(float(v))] for i, v in enumerate(report.history))
    report_path = _write_json(
        layout.parametrize / "report.json",
        {
            "epochs": report.epochs,
            "stop_reason": report.stop_reason,
            "final_loss": report.final_loss,
            "final_mse": report.final_mse,
            "final_penalty": report.final_penalty,
            "final_weight_decay": report.final_weight_decay,
            **report.extra,
        },
    )
    logger.info(f"Parametrization done: mse={report.final_mse:.4e}, penalty={report.final_penalty:.4e}")
    return StageResult("parametrize", format_fit_report(report), [layout.network, loss_path, report_path])


def cmd_snapshots(cfg: PipelineConfig, out_dir: Path, settings: Settings | None = None) -> StageResult:
    """Sample mu in the bounds, solve the provider for each inlet, write the snapshot set."""
    settings = settings or get_settings()
    layout = RunLayout(Path(out_dir))
    case = build_case(cfg)
    net, scheme, bounds = _load_scheme(cfg, layout)
    pcfg = cfg.snapshots.provider

    if pcfg.kind == "file":
        snapshots = load_snapshots(pcfg.path, case.geometry)
        if snapshots.p != scheme.p:
            raise WakeRomError(
                f"external snapshots carry {snapshots.p} parameters, scheme defines {scheme.p}"
            )
    else:
        seed = stage_seed(cfg.rng_seed, "snapshots")
        mus = sample_param_vectors(scheme.p, cfg.snapshots.count, bounds, seed)
        with closing(provider_from_config(pcfg, case.geometry, settings)) as provider:
            snapshots = generate_snapshots(
                net, scheme, mus, provider, workers=settings.workers,
                meta={"rng_seed": seed, "scheme": [[t.layer, t.kind, t.index] for t in scheme.targets]},
            )

    save_snapshots(snapshots, layout.snapshots)
    base_inlet = inlet_from_params(net, scheme, np.zeros(scheme.p), case.geometry)
    write_field_csv(base_inlet, layout.snapshots / "base_inlet.csv")
    return StageResult(
        "snapshots",
        format_snapshot_summary(snapshots),
        [layout.snapshots / name for name in ("params.csv", "wakes.csv", "meta.json", "base_inlet.csv")],
    )


def _fit_final_rom(cfg: PipelineConfig, layout: RunLayout, case: CaseData, variant: str) -> RomVariant:
    snapshots = load_snapshots(layout.snapshots, case.geometry)
    _, train_order = split_pool(snapshots.M, cfg.rom.n_test, cfg.rng_seed)
    train_set = snapshots.subset(train_order[: max(cfg.rom.m_list)])
    seed = stage_seed(cfg.rng_seed, "rom", 1)
    logger.info(f"Fitting {variant} on {train_set.M} snapshots for optimization")
    return rom_fit(variant, train_set, cfg.rom.latent_dim, cfg.rom, seed)


def cmd_rom(
    cfg: PipelineConfig, out_dir: Path, variant: str | None = None, settings: Settings | None = None
) -> StageResult:
    """Sensitivity grid over variants and training sizes, then persist the selected ROM."""
    settings = settings or get_settings()
    layout = RunLayout(Path(out_dir))
    _require(layout.snapshots / "wakes.csv", "snapshots")
    case = build_case(cfg)
    snapshots = load_snapshots(layout.snapshots, case.geometry)
    layout.rom.mkdir(parents=True, exist_ok=True)

    report = sensitivity_analysis(
        cfg.rom.variants, snapshots, cfg.rom.m_list, cfg.rom.latent_dim, cfg.rom.runs,
        cfg.rng_seed, cfg.rom, case.restriction, cfg.rom.n_test, settings.workers,
    )
    cells_path = layout.rom / "sensitivity_cells.csv"
    summary_path = layout.rom / "sensitivity_summary.csv"
    report.write_csv(cells_path, summary_path)
    aggregates = report.aggregate()

    chosen = variant or cfg.rom.selected_variant
    if chosen == "best":
        chosen = best_variant(aggregates)
    rom = _fit_final_rom(cfg, layout, case, chosen)
    save_rom(rom, layout.model)

    summary = format_sensitivity_table(aggregates) + f"\n\nSelected variant: {chosen}"
    if report.failures():
        summary += f"\nFailed cells: {len(report.failures())}"
    return StageResult("rom", summary, [cells_path, summary_path, layout.model / "rom.json"])


def _target(cfg: PipelineConfig, layout: RunLayout, case: CaseData, settings: Settings):
    """Target vector and restriction for the fitness."""
    if cfg.optimize.target == "mu":
        net, scheme, _ = _load_scheme(cfg, layout)
        with closing(provider_from_config(cfg.snapshots.provider, case.geometry, settings)) as provider:
            wake = provider.solve(inlet_from_params(net, scheme, cfg.optimize.target_mu, case.geometry))
        write_field_csv(wake, layout.optimize / "target_wake.csv")
        if case.restriction is not None:
            return case.restriction @ wake.values, case.restriction
        return wake.values, None
    if case.target is not None:
        return case.target.values, None
    restriction = case.restriction
    if restriction is None:
        restriction = observation_operator(case.geometry, case.observations)
    return case.observations.values, restriction


def _write_optimum(
    result: OptResult, rom: RomVariant, net: DenseNetwork, scheme: PerturbationScheme,
    geometry: PlaneGeometry, directory: Path,
) -> list[Path]:
    tag = result.method
    paths = [directory / f"result_{tag}.json", directory / f"inlet_{tag}.csv", directory / f"wake_{tag}.csv"]
    result.write_json(paths[0])
    write_field_csv(inlet_from_params(net, scheme, result.best_mu, geometry), paths[1])
    write_field_csv(rom.predict(result.best_mu), paths[2])
    if tag == "ga":
        paths.append(directory / "trace_ga.csv")
        result.write_trace_csv(paths[-1])
    return paths


def cmd_optimize(
    cfg: PipelineConfig, out_dir: Path, variant: str | None = None, settings: Settings | None = None
) -> StageResult:
    """Recover mu against the ROM fitness with GA and/or BFGS; write optimal fields."""
    settings = settings or get_settings()
    layout = RunLayout(Path(out_dir))
    case = build_case(cfg)
    net, scheme, bounds = _load_scheme(cfg, layout)
    layout.optimize.mkdir(parents=True, exist_ok=True)

    _require(layout.model / "rom.json", "rom")
    rom = load_rom(layout.model, case.geometry)
    if variant is not None and variant != rom.name:
        rom = _fit_final_rom(cfg, layout, case, variant)

    if cfg.optimize.target_mu is not None and len(cfg.optimize.target_mu) != scheme.p:
        raise WakeRomError(f"target_mu has {len(cfg.optimize.target_mu)} entries, scheme has {scheme.p}")
    target, restriction = _target(cfg, layout, case, settings)
    fitness = RomFitness(rom, target, restriction)

    summaries = [f"ROM variant: {rom.name}"]
    artifacts: list[Path] = []
    if "ga" in cfg.optimize.methods:
        ga_cfg = cfg.optimize.ga.model_copy(
            update={"bounds": bounds.as_pairs(), "rng_seed": stage_seed(cfg.rng_seed, "optimize", 0)}
        )
        result = ga_minimize(fitness, ga_cfg, workers=settings.workers)
        artifacts += _write_optimum(result, rom, net, scheme, case.geometry, layout.optimize)
        summaries.append(format_opt_result(result))

    if "bfgs" in cfg.optimize.methods:
        bcfg = cfg.optimize.bfgs
        if bcfg.x0 is not None:
            starts = np.array([bcfg.x0], dtype=float)
        else:
            rng = np.random.default_rng(stage_seed(cfg.rng_seed, "optimize", 1))
            starts = rng.uniform(bounds.lower, bounds.upper, size=(bcfg.starts, scheme.p))
        results = bfgs_multistart(fitness, starts, bcfg.fd_step, bcfg.max_iter, bcfg.gtol)
        best = min(results, key=lambda r: r.best_fitness)
        artifacts += _write_optimum(best, rom, net, scheme, case.geometry, layout.optimize)
        starts_path = layout.optimize / "bfgs_starts.json"
        _write_json(
            starts_path,
            {
                "starts": starts.tolist(),
                "results": [r.to_dict() for r in results],
                "distinct_minima": distinct_minima(results),
            },
        )
        artifacts.append(starts_path)
        summaries.append(format_opt_result(best))

    return StageResult("optimize", "\n\n".join(summaries), artifacts)


def run_stage(
    stage: str, cfg: PipelineConfig, out_dir: Path, variant: str | None = None,
    settings: Settings | None = None,
) -> StageResult:
    logger.info(f"Stage '{stage}' starting (out={out_dir}, seed={cfg.rng_seed})")
    if stage == "parametrize":
        result = cmd_parametrize(cfg, out_dir)
    elif stage == "snapshots":
        result = cmd_snapshots(cfg, out_dir, settings)
    elif stage == "rom":
        result = cmd_rom(cfg, out_dir, variant, settings)
    elif stage == "optimize":
        result = cmd_optimize(cfg, out_dir, variant, settings)
    else:
        raise WakeRomError(f"unknown stage '{stage}'")
    logger.info(f"Stage '{stage}' finished")
    return result


def cmd_pipeline(
    cfg: PipelineConfig, out_dir: Path, variant: str | None = None, settings: Settings | None = None
) -> list[StageResult]:
    return [run_stage(stage, cfg, out_dir, variant, settings) for stage in STAGES]


def read_sensitivity(out_dir: Path) -> str:
    layout = RunLayout(Path(out_dir))
    _require(layout.rom / "sensitivity_summary.csv", "rom")
    return format_sensitivity_table(SensitivityReport.read_summary(layout.rom / "sensitivity_summary.csv"))


def read_optimum(out_dir: Path) -> list[dict]:
    layout = RunLayout(Path(out_dir))
    results = []
    for tag in ("ga", "bfgs"):
        path = layout.optimize / f"result_{tag}.json"
        if path.exists():
            results.append(json.loads(path.read_text(encoding="utf-8")))
    if not results:
        raise WakeRomError(f"no optimization results under {layout.optimize}; run 'optimize' first")
    return results
