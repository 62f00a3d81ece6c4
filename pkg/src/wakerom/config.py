"""Environment settings with WAKEROM_ prefix and the versioned pipeline document."""
from importlib import resources
from pathlib import Path
from typing import Literal

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)
from pydantic_settings import BaseSettings, SettingsConfigDict

from wakerom.errors import ConfigError

BUNDLED_CASES = ("case1", "case2", "quick")

ActivationName = Literal["identity", "softplus", "leaky_relu"]
VariantName = Literal[
    "POD-RBF", "POD-ANN", "linAE-RBF", "linAE-ANN", "nonlinAE-RBF", "nonlinAE-ANN"
]
ALL_VARIANTS: tuple[str, ...] = (
    "POD-RBF", "POD-ANN", "linAE-RBF", "linAE-ANN", "nonlinAE-RBF", "nonlinAE-ANN"
)


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="WAKEROM_",
        env_file=".env",
        env_file_encoding="utf-8",
    )

    out_dir: Path = Path("runs")
    log_level: str = "INFO"
    workers: int = Field(1, ge=1)
    solver_url: str | None = None
    solver_token: str | None = None
    solver_timeout: float = 60.0


_settings: Settings | None = None


def get_settings() -> Settings:
    global _settings
    if _settings is None:
        try:
            _settings = Settings()
        except ValidationError as e:
            raise ConfigError(f"invalid WAKEROM_ environment settings:\n{e}") from e
    return _settings


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TrainConfig(_Section):
    """Stop criteria and loss weights for one network training run."""

    learning_rate: float = Field(1e-3, gt=0)
    max_epochs: int | None = Field(1000, ge=1)
    target_loss: float | None = Field(None, ge=0)
    weight_decay: float = Field(0.0, ge=0)
    continuity_weight: float = Field(0.0, ge=0)
    rng_seed: int = 0
    optimizer: Literal["adam", "gradient_descent"] = "adam"
    log_every: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _needs_stop_criterion(self) -> "TrainConfig":
        if self.max_epochs is None and self.target_loss is None:
            raise ValueError("at least one of max_epochs / target_loss must be set")
        return self


class GeometryConfig(_Section):
    radius: float = Field(1.0, gt=0)
    n_radial: int = Field(100, ge=1)
    n_angular: int = Field(100, ge=1)


class CaseConfig(_Section):
    kind: Literal["smooth", "pointwise", "observations"] = "smooth"
    observations_path: Path | None = None
    side: float = Field(1.0, gt=0)
    n_per_axis: int = Field(6, ge=2)
    restrict_to_observations: bool = False
    geometry: GeometryConfig = GeometryConfig()

    @field_validator("observations_path")
    @classmethod
    def _resolve_observations(cls, value: Path | None, info: ValidationInfo) -> Path | None:
        if value is None:
            return None
        base = (info.context or {}).get("base_dir")
        if base is not None and not value.is_absolute():
            value = Path(base) / value
        if not value.exists():
            raise ValueError(f"observations file not found: {value}")
        return value

    @model_validator(mode="after")
    def _observations_need_file(self) -> "CaseConfig":
        if self.kind == "observations" and self.observations_path is None:
            raise ValueError("case kind 'observations' requires observations_path")
        return self


class ParametrizationConfig(_Section):
    hidden: list[int] = Field(default_factory=lambda: [10, 5, 3], min_length=1)
    activation: ActivationName = "softplus"
    output_activation: ActivationName = "identity"
    train: TrainConfig = TrainConfig(learning_rate=5e-3, max_epochs=20000, target_loss=1e-4)
    continuity_samples: int = Field(100, ge=0)


class ParamRefConfig(_Section):
    layer: int = Field(ge=0)
    kind: Literal["bias", "weight"]
    index: int = Field(ge=0)


class PerturbationConfig(_Section):
    preset: Literal["last_two_biases", "last_hidden_layer"] | None = "last_two_biases"
    targets: list[ParamRefConfig] | None = None
    bounds: tuple[float, float] = (-0.5, 0.5)

    @model_validator(mode="after")
    def _check(self) -> "PerturbationConfig":
        if self.preset is None and not self.targets:
            raise ValueError("perturbation needs a preset or explicit targets")
        if self.bounds[0] > self.bounds[1]:
            raise ValueError(f"perturbation bounds reversed: {self.bounds}")
        return self


class ProviderConfig(_Section):
    kind: Literal["synthetic", "remote", "file"] = "synthetic"
    blur_radius: float = Field(0.05, gt=0)
    attenuation: float = Field(0.9, gt=0, le=1)
    saturation: float | None = Field(None, gt=0)
    cutoff_sigmas: float | None = Field(4.0, gt=0)
    path: Path | None = None

    @model_validator(mode="after")
    def _file_needs_path(self) -> "ProviderConfig":
        if self.kind == "file" and self.path is None:
            raise ValueError("provider kind 'file' requires path")
        return self


class SnapshotsConfig(_Section):
    count: int = Field(100, ge=1)
    provider: ProviderConfig = ProviderConfig()


class AnnConfig(_Section):
    hidden: list[int] = Field(default_factory=lambda: [4, 4])
    activation: ActivationName = "softplus"
    scale: bool = True
    train: TrainConfig = TrainConfig(learning_rate=5e-3, max_epochs=200000, target_loss=1e-3)


class AeConfig(_Section):
    encoder_hidden: list[int] = Field(default_factory=list)
    decoder_hidden: list[int] = Field(default_factory=list)
    activation: ActivationName = "identity"
    standardize: bool = False
    train: TrainConfig = TrainConfig(learning_rate=1e-3, max_epochs=1000)


class RomConfig(_Section):
    latent_dim: int = Field(3, ge=1)
    variants: list[VariantName] = Field(default_factory=lambda: list(ALL_VARIANTS))
    m_list: list[int] = Field(default_factory=lambda: [10, 30, 50, 70, 90], min_length=1)
    runs: int = Field(3, ge=1)
    n_test: int = Field(10, ge=1)
    pod_method: Literal["svd", "correlation"] = "svd"
    rbf_epsilon: float = Field(1.0, gt=0)
    rbf_tune: bool = False
    rbf_epsilon_candidates: list[float] = Field(
        default_factory=lambda: [0.1, 0.3, 1.0, 3.0, 10.0]
    )
    ann_pod: AnnConfig = AnnConfig()
    ann_linear_ae: AnnConfig = AnnConfig(
        train=TrainConfig(learning_rate=5e-3, max_epochs=100000, target_loss=1e-4)
    )
    ann_nonlinear_ae: AnnConfig = AnnConfig(
        hidden=[40, 40],
        train=TrainConfig(learning_rate=5e-3, max_epochs=100000, target_loss=1e-5),
    )
    linear_ae: AeConfig = AeConfig()
    nonlinear_ae: AeConfig = AeConfig(
        encoder_hidden=[200],
        decoder_hidden=[200],
        activation="leaky_relu",
        train=TrainConfig(
            learning_rate=5e-4, max_epochs=5000, target_loss=5e-4, weight_decay=5e-4
        ),
    )
    selected_variant: VariantName | Literal["best"] = "best"

    @model_validator(mode="after")
    def _check(self) -> "RomConfig":
        if any(m < 1 for m in self.m_list):
            raise ValueError("m_list entries must be positive")
        if self.latent_dim > min(self.m_list):
            raise ValueError(
                f"latent_dim {self.latent_dim} exceeds smallest training size {min(self.m_list)}"
            )
        if not self.variants:
            raise ValueError("at least one ROM variant is required")
        return self


class GaConfig(_Section):
    pop_init: int = Field(200, ge=1)
    mu_select: int = Field(50, ge=1)
    lambda_offspring: int = Field(100, ge=1)
    generations: int = Field(20, ge=0)
    cx_prob: float = Field(0.4, ge=0, le=1)
    mut_prob: float = Field(0.6, ge=0, le=1)
    mutation_std: float = Field(1.0, ge=0)
    mutation_gene_prob: float = Field(0.5, ge=0, le=1)
    blend_alpha: float = Field(0.5, ge=0)
    bounds: list[tuple[float, float]] = Field(
        default_factory=lambda: [(-0.5, 0.5)] * 4, min_length=1
    )
    rng_seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "GaConfig":
        if self.cx_prob + self.mut_prob > 1.0 + 1e-12:
            raise ValueError("cx_prob + mut_prob must not exceed 1")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ValueError(f"degenerate gene bounds ({lo}, {hi})")
        return self


class BfgsConfig(_Section):
    fd_step: float = Field(1e-7, gt=0)
    x0: list[float] | None = None
    starts: int = Field(1, ge=1)
    max_iter: int = Field(200, ge=1)
    gtol: float = Field(1e-6, ge=0)


class OptimizeConfig(_Section):
    methods: list[Literal["ga", "bfgs"]] = Field(
        default_factory=lambda: ["ga", "bfgs"], min_length=1
    )
    ga: GaConfig = GaConfig()
    bfgs: BfgsConfig = BfgsConfig()
    target: Literal["case", "mu"] = "case"
    target_mu: list[float] | None = None

    @model_validator(mode="after")
    def _check(self) -> "OptimizeConfig":
        if self.target == "mu" and self.target_mu is None:
            raise ValueError("optimization target 'mu' requires target_mu")
        return self


class PipelineConfig(_Section):
    """The whole pipeline document, validated before any compute starts."""

    schema_version: Literal[1] = 1
    case: CaseConfig = CaseConfig()
    parametrization: ParametrizationConfig = ParametrizationConfig()
    perturbation: PerturbationConfig = PerturbationConfig()
    snapshots: SnapshotsConfig = SnapshotsConfig()
    rom: RomConfig = RomConfig()
    optimize: OptimizeConfig = OptimizeConfig()
    rng_seed: int = 0

    @model_validator(mode="after")
    def _check_counts(self) -> "PipelineConfig":
        needed = max(self.rom.m_list) + self.rom.n_test
        if self.snapshots.provider.kind != "file" and self.snapshots.count < needed:
            raise ValueError(
                f"snapshot count {self.snapshots.count} is below max(m_list) + n_test = {needed}"
            )
        if self.case.restrict_to_observations and self.case.kind == "smooth":
            raise ValueError("restrict_to_observations needs a pointwise or observations case")
        return self


def load_pipeline_config(source: str | Path) -> PipelineConfig:
    """Load and validate a pipeline document from a path or a bundled case name."""
    path = Path(source)
    name = path.stem if path.suffix == ".json" else str(source)
    try:
        if not path.exists() and name in BUNDLED_CASES:
            text = resources.files("wakerom.cases").joinpath(f"{name}.json").read_text("utf-8")
            base_dir = None
        else:
            text = path.read_text(encoding="utf-8")
            base_dir = path.parent
    except OSError as e:
        raise ConfigError(f"cannot read config {source}: {e}") from e

    try:
        return PipelineConfig.model_validate_json(text, context={"base_dir": base_dir})
    except ValidationError as e:
        raise ConfigError(f"invalid config {source}:\n{e}") from e
