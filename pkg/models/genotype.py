"""
The 12-gene architecture description and its fixed-length one-hot encoding.
"""
import hashlib
import json
from enum import Enum
from typing import Any, Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from core.exceptions import InvalidOption, MalformedEncoding


class FeatureSelection(str, Enum):
    NO_FILTER = "NoFilter"
    MRMR = "mRMR"
    PEARSON = "Pearson"


class Generalization(str, Enum):
    NONE = "None"
    GAUSSIAN = "Gaussian"


class Stationarization(str, Enum):
    NONE = "None"
    REVIN = "RevIN"
    DAIN = "DAIN"


class TimeFeatures(str, Enum):
    NONE = "None"
    TIME_FEATURES = "TimeFeatures"


class FeatureExtraction(str, Enum):
    NONE = "None"
    LINEAR_EMBED = "LinearEmbed"
    DECOMP = "Decomp"
    MULTI_SCALE_DECOMP = "MultiScaleDecomp"
    TIME_FEATURE_MIX = "TimeFeatureMix"
    FREQ_MIX = "FreqMix"


class CoreStructure(str, Enum):
    LSTM = "LSTM"
    MLP = "MLP"
    CNN = "CNN"
    TCN = "TCN"


class Optimizer(str, Enum):
    ADAM = "Adam"
    SGD = "SGD"


# Gene name -> ordered options; the order fixes the one-hot layout.
GENE_OPTIONS: Dict[str, Tuple[Any, ...]] = {
    "fsm": tuple(FeatureSelection),
    "fst": (0.3, 0.4, 0.5),
    "dgm": tuple(Generalization),
    "sm": tuple(Stationarization),
    "fam": tuple(TimeFeatures),
    "fem": tuple(FeatureExtraction),
    "cps": tuple(CoreStructure),
    "ln": (1, 2, 3),
    "hs": (64, 128, 256, 512),
    "lr": (0.0005, 0.001),
    "of": tuple(Optimizer),
    "bs": (32, 64),
}
GENE_NAMES: Tuple[str, ...] = tuple(GENE_OPTIONS)
ENCODING_LENGTH = sum(len(options) for options in GENE_OPTIONS.values())


def option_label(value: Any) -> str:
    return value.value if isinstance(value, Enum) else repr(value) if isinstance(value, float) else str(value)


def coerce_option(gene: str, raw: Any) -> Any:
    """Map a raw value (enum, string or number) onto the gene's option, or raise InvalidOption"""
    if gene not in GENE_OPTIONS:
        raise InvalidOption(gene, raw)
    for option in GENE_OPTIONS[gene]:
        if isinstance(option, Enum):
            if raw == option or raw == option.value:
                return option
        elif isinstance(raw, bool):
            continue
        elif isinstance(raw, (int, float, np.integer, np.floating)) and float(raw) == float(option):
            return option
        elif isinstance(raw, str) and raw.strip() == option_label(option):
            return option
        elif isinstance(raw, str):
            try:
                if float(raw) == float(option):
                    return option
            except ValueError:
                pass
    raise InvalidOption(gene, raw)


class Genotype(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    fsm: FeatureSelection = Field(..., description="Feature selection method")
    fst: float = Field(..., description="Feature selection threshold")
    dgm: Generalization = Field(..., description="Data generalization method")
    sm: Stationarization = Field(..., description="Stationarization method")
    fam: TimeFeatures = Field(..., description="Feature addition method")
    fem: FeatureExtraction = Field(..., description="Feature extraction method")
    cps: CoreStructure = Field(..., description="Core predictive structure")
    ln: int = Field(..., description="Core layer number")
    hs: int = Field(..., description="Hidden size")
    lr: float = Field(..., description="Learning rate")
    of: Optimizer = Field(..., description="Optimizer function")
    bs: int = Field(..., description="Batch size")

    @model_validator(mode="before")
    @classmethod
    def _canonical(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        for gene in GENE_NAMES:
            if gene in data:
                data[gene] = coerce_option(gene, data[gene])
        if data.get("fsm") == FeatureSelection.NO_FILTER:
            data["fst"] = GENE_OPTIONS["fst"][0]
        return data

    @field_validator("fst", "ln", "hs", "lr", "bs")
    @classmethod
    def _in_options(cls, value, info):
        return coerce_option(info.field_name, value)

    def genes(self) -> Dict[str, Any]:
        return {gene: getattr(self, gene) for gene in GENE_NAMES}

    def labels(self) -> Dict[str, str]:
        return {gene: option_label(value) for gene, value in self.genes().items()}

    def replace(self, **genes) -> "Genotype":
        return Genotype(**{**self.genes(), **genes})

    @property
    def key(self) -> str:
        return genotype_hash(self)

    @classmethod
    def from_json(cls, text: str) -> "Genotype":
        """Parse a 12-gene JSON object; unknown options raise InvalidOption naming the gene"""
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as e:
            raise MalformedEncoding(f"Genotype JSON is not parseable: {e}")
        return cls.from_dict(payload)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "Genotype":
        missing = [gene for gene in GENE_NAMES if gene not in payload]
        if missing:
            raise InvalidOption(missing[0], None)
        for gene in GENE_NAMES:
            coerce_option(gene, payload[gene])
        try:
            return cls(**payload)
        except ValidationError as e:
            loc = e.errors()[0]["loc"]
            gene = str(loc[0]) if loc else "genotype"
            raise InvalidOption(gene, payload.get(gene))


class EncodedGenotype(BaseModel):
    model_config = ConfigDict(frozen=True)

    bits: Tuple[int, ...]

    @field_validator("bits")
    @classmethod
    def _binary(cls, bits):
        if len(bits) != ENCODING_LENGTH:
            raise ValueError(f"encoding must have {ENCODING_LENGTH} bits, got {len(bits)}")
        if any(b not in (0, 1) for b in bits):
            raise ValueError("encoding bits must be 0 or 1")
        return tuple(int(b) for b in bits)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.float64)

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)


def encode(g: Genotype) -> EncodedGenotype:
    bits = []
    for gene, options in GENE_OPTIONS.items():
        segment = [0] * len(options)
        segment[options.index(getattr(g, gene))] = 1
        bits.extend(segment)
    return EncodedGenotype(bits=tuple(bits))


def decode(e) -> Genotype:
    bits = e.bits if isinstance(e, EncodedGenotype) else tuple(int(b) for b in e)
    if len(bits) != ENCODING_LENGTH:
        raise MalformedEncoding(f"encoding must have {ENCODING_LENGTH} bits, got {len(bits)}")
    genes = {}
    offset = 0
    for gene, options in GENE_OPTIONS.items():
        segment = bits[offset:offset + len(options)]
        offset += len(options)
        ones = [i for i, b in enumerate(segment) if b == 1]
        if len(ones) != 1 or any(b not in (0, 1) for b in segment):
            raise MalformedEncoding(f"segment '{gene}' must hold exactly one 1, got {list(segment)}")
        genes[gene] = options[ones[0]]
    return Genotype(**genes)


def genotype_hash(g: Genotype) -> str:
    """Stable key of the canonical encoding; genotypes are canonical on construction"""
    return hashlib.sha256(str(encode(g)).encode("ascii")).hexdigest()[:16]
