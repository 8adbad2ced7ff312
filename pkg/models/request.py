from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.frame import SplitSpec, TaskSpec
from models.genotype import Optimizer, coerce_option

HORIZONS: Tuple[int, ...] = (12, 24, 48, 72, 168, 336)


def _split_csv(value):
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    path: Optional[Path] = Field(None, description="CSV with a timestamp,<feature_1>,... header; synthetic data when unset")
    target: str = Field("power", description="Name of the PV power column")
    features: Optional[List[str]] = Field(None, description="Expected feature columns; defaults to the CSV header")
    synth_days: int = Field(120, ge=1, description="Days of synthetic data when no path is given")
    step: int = Field(1, ge=1, description="Sliding window stride")
    zero_ratio_limit: float = Field(0.8, ge=0.0, le=1.0, description="Day deletion threshold on missing+zero share")
    outlier_run_limit: int = Field(10, ge=1, description="Day deletion threshold on repeated outliers")

    @field_validator("features", mode="before")
    @classmethod
    def _features(cls, value):
        return _split_csv(value)


class NoiseConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sigma0: float = Field(0.05, ge=0.0, description="Task 2 future-weather noise scale")
    gamma: float = Field(1.0, description="Exponential growth rate of noise over the horizon")
    seed: int = Field(0, description="Base seed of the per-window noise")


class SearchConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k_ini: int = Field(10, ge=1, description="Initial population size")
    k_p: int = Field(10, ge=1, description="Parents per iteration")
    p_m: float = Field(0.2, ge=0.0, le=1.0, description="Per-gene mutation probability")
    k_m: int = Field(5, ge=1, description="Mutants per parent")
    k_l: int = Field(10, ge=1, description="Evaluations per iteration")
    t_max: int = Field(120, ge=1, description="Maximum iterations")
    ensemble_size: int = Field(5, ge=2, description="Surrogate members")
    ensemble_hidden: int = Field(64, ge=1, description="Surrogate hidden width")
    ensemble_epochs: int = Field(200, ge=1, description="Surrogate full-batch training epochs")
    ensemble_lr: float = Field(0.01, gt=0.0, description="Surrogate Adam learning rate")
    max_retries: int = Field(20, ge=0, description="Re-mutations of a duplicate candidate before it is discarded")
    target_error: Optional[float] = Field(None, description="Stop once the population best reaches this error")
    seed: int = 0


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(0.001, description="Learning rate")
    optimizer: Optimizer = Field(Optimizer.ADAM, description="Adam or plain SGD")
    batch_size: int = Field(32, description="Mini-batch size")
    max_epochs: int = Field(50, ge=1, description="Epoch ceiling")
    patience: int = Field(3, ge=1, description="Early stopping patience in epochs")
    seed: int = 0

    @field_validator("lr")
    @classmethod
    def _lr_option(cls, value):
        return coerce_option("lr", value)

    @field_validator("batch_size")
    @classmethod
    def _bs_option(cls, value):
        return coerce_option("bs", value)


class BlockConfig(BaseModel):
    """Fixed per-kind block settings"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    decomp_kernel: int = Field(25, ge=3, description="Moving-average kernel of the single-scale decomposition")
    multi_scale_kernels: Tuple[int, ...] = Field((13, 17, 25), description="Kernels of the multi-scale decomposition")
    noise_sigma_frac: float = Field(0.01, ge=0.0, description="Training-time Gaussian noise as a share of feature std")
    mixing_dropout: float = Field(0.1, ge=0.0, lt=1.0, description="Dropout inside mixing blocks")
    dain_gate_bias: float = Field(10.0, description="Initial gate bias of the adaptive normalization")

    @field_validator("multi_scale_kernels", mode="before")
    @classmethod
    def _kernels(cls, value):
        return tuple(int(k) for k in _split_csv(value))

    @model_validator(mode="after")
    def _odd_kernels(self):
        kernels = (self.decomp_kernel,) + tuple(self.multi_scale_kernels)
        if any(k % 2 == 0 or k < 3 for k in kernels):
            raise ValueError(f"decomposition kernels must be odd and >= 3, got {kernels}")
        if len(self.multi_scale_kernels) < 2:
            raise ValueError("multi-scale decomposition needs at least two kernels")
        return self


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, description="Master seed; sections without an explicit seed inherit it")
    output_dir: Path = Field(Path("runs"), description="Where artifacts are written")
    workers: int = Field(1, ge=1, description="Parallel evaluation workers")
    data: DataConfig = Field(default_factory=DataConfig)
    task: TaskSpec = Field(default_factory=TaskSpec)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    split: SplitSpec = Field(default_factory=SplitSpec)
    search: SearchConfig = Field(default_factory=SearchConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    blocks: BlockConfig = Field(default_factory=BlockConfig)
    space: Dict[str, List[str]] = Field(default_factory=dict, description="Gene pins: gene -> allowed options")

    @field_validator("space", mode="before")
    @classmethod
    def _pins(cls, value):
        if not isinstance(value, dict):
            return value
        pins = {}
        for gene, options in value.items():
            options = _split_csv(options)
            for option in options:
                coerce_option(gene, option)
            pins[gene] = list(options)
        return pins

    @model_validator(mode="after")
    def _check(self):
        if self.task.horizon not in HORIZONS:
            raise ValueError(f"horizon must be one of {HORIZONS}, got {self.task.horizon}")
        for section in (self.search, self.train, self.noise):
            if "seed" not in section.model_fields_set:
                section.seed = self.seed
        return self


RUN_CONFIG_SECTIONS = ("data", "task", "noise", "split", "search", "train", "blocks", "space")
