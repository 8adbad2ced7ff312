import math
from datetime import datetime
from enum import Enum
from typing import Annotated, Any, List, Optional, Tuple

from pydantic import BaseModel, BeforeValidator, Field, PlainSerializer, model_validator

from models.frame import TaskSpec
from models.genotype import Genotype
from models.request import BlockConfig, NoiseConfig


def _float_in(value: Any) -> Any:
    return float(value) if isinstance(value, str) else value


def _float_out(value: float) -> Any:
    if math.isfinite(value):
        return value
    return "NaN" if math.isnan(value) else ("Infinity" if value > 0 else "-Infinity")


# Non-finite floats survive a JSON round trip as the strings "Infinity"/"NaN".
JsonFloat = Annotated[float, BeforeValidator(_float_in), PlainSerializer(_float_out, when_used="json")]


class EvalStatus(str, Enum):
    OK = "ok"
    DIVERGED = "diverged"
    FAILED = "failed"


class EpochStats(BaseModel):
    epoch: int = Field(..., ge=1, description="1-based epoch number")
    train_loss: JsonFloat = Field(..., description="Mean L1 loss over the epoch's mini-batches")
    val_loss: JsonFloat = Field(..., description="Validation MAE after the epoch")


class EvalRecord(BaseModel):
    genotype: Genotype = Field(..., description="Canonical genotype")
    genotype_hash: str = Field(..., description="Hash of the canonical encoding")
    measured_error: JsonFloat = Field(..., ge=0.0, description="Validation MAE; Infinity for failed runs")
    param_count: int = Field(..., ge=0, description="Exact trainable scalar count; 0 only on failed records")
    epochs_run: int = Field(0, ge=0)
    best_epoch: int = Field(0, ge=0)
    history: List[EpochStats] = Field(default_factory=list)
    wall_seconds: float = Field(0.0, ge=0.0)
    status: EvalStatus = EvalStatus.OK
    message: Optional[str] = Field(None, description="Failure reason for non-ok records")

    @model_validator(mode="after")
    def _check_count(self):
        if self.status == EvalStatus.OK and self.param_count <= 0:
            raise ValueError("an ok record needs a positive param_count")
        return self

    @property
    def objectives(self) -> Tuple[float, int]:
        return self.measured_error, self.param_count

    @property
    def finite(self) -> bool:
        return math.isfinite(self.measured_error)


class ParetoEntry(BaseModel):
    genotype_hash: str
    genotype: Genotype
    measured_error: JsonFloat
    param_count: int

    @classmethod
    def from_record(cls, record: EvalRecord) -> "ParetoEntry":
        return cls(genotype_hash=record.genotype_hash, genotype=record.genotype,
                   measured_error=record.measured_error, param_count=record.param_count)


class IterationSnapshot(BaseModel):
    iteration: int = Field(..., ge=0, description="0 is the initial population")
    evaluations: int = Field(..., ge=0, description="Distinct genotypes evaluated so far")
    best_error: JsonFloat = Field(..., description="Population-best measured error")
    best_hash: Optional[str] = None
    hypervolume: float = Field(0.0, ge=0.0, description="Front hypervolume against the worst observed pair")
    front: List[ParetoEntry] = Field(default_factory=list)
    exhausted: bool = Field(False, description="Candidate generation found no unevaluated genotype")


class IterationTiming(BaseModel):
    iteration: int
    wall_seconds: float
    evaluations: int


class WeightEntry(BaseModel):
    name: str
    shape: List[int]
    offset: int = Field(..., ge=0, description="Offset in float64 elements")


class WeightsManifest(BaseModel):
    dtype: str = Field("<f8", description="Little-endian float64")
    total: int = Field(..., ge=0)
    entries: List[WeightEntry]


class ArchitectureManifest(BaseModel):
    genotype: Genotype
    genotype_hash: str
    task: TaskSpec
    noise: NoiseConfig
    blocks: BlockConfig
    feature_names: List[str] = Field(..., description="Full feature set the model was trained on, in column order")
    kept_features: List[str] = Field(..., description="Features surviving selection")
    target_name: str
    feature_std: List[float] = Field(..., description="Per-feature train std of the full feature set")
    measured_error: JsonFloat
    param_count: int
    seed: int
    weights_file: str = "weights.bin"


class HoldoutReportEntry(BaseModel):
    genotype_hash: str
    genotype: Genotype
    measured_error: JsonFloat
    param_count: int
    test_mae: JsonFloat
    test_wmape: Optional[JsonFloat] = None


class BaselineEntry(BaseModel):
    name: str
    genotype_hash: str
    measured_error: JsonFloat
    param_count: int
    status: EvalStatus


class ForecastRow(BaseModel):
    anchor: datetime = Field(..., description="Last historical timestamp of the window")
    timestamp: datetime = Field(..., description="Forecast target time")
    step: int = Field(..., ge=1, description="Steps ahead of the anchor")
    forecast: float
    actual: float


class ForecastResponse(BaseModel):
    genotype_hash: str = Field(..., description="Architecture that produced the forecast")
    windows: int = Field(..., ge=0)
    mae: JsonFloat
    wmape: Optional[JsonFloat] = None
    rows: List[ForecastRow] = Field(default_factory=list)
    timestamp: datetime = Field(default_factory=datetime.now, description="Response timestamp")


class ParetoResponse(BaseModel):
    count: int
    entries: List[ParetoEntry]


class HistoryResponse(BaseModel):
    iterations: int
    history: List[IterationSnapshot]
