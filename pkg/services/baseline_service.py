"""
Fixed in-space configurations echoing common non-transformer forecasters.
"""
import logging
from typing import Dict, List, Optional

from models.genotype import Genotype
from models.response import BaselineEntry
from services.search_service import Evaluator

logger = logging.getLogger(__name__)

_COMMON = {"fsm": "NoFilter", "fst": 0.3, "dgm": "None", "fam": "None", "lr": 0.001, "of": "Adam", "bs": 32}

BASELINES: Dict[str, Genotype] = {
    "linear": Genotype(**_COMMON, sm="RevIN", fem="None", cps="MLP", ln=1, hs=64),
    "decomposition_linear": Genotype(**_COMMON, sm="None", fem="Decomp", cps="MLP", ln=1, hs=64),
    "tsmixer_like": Genotype(**_COMMON, sm="RevIN", fem="TimeFeatureMix", cps="MLP", ln=2, hs=256),
    "frets_like": Genotype(**_COMMON, sm="RevIN", fem="FreqMix", cps="MLP", ln=2, hs=256),
    "lstm": Genotype(**_COMMON, sm="None", fem="None", cps="LSTM", ln=2, hs=128),
    "tcn": Genotype(**_COMMON, sm="None", fem="None", cps="TCN", ln=3, hs=64),
    "cnn": Genotype(**_COMMON, sm="None", fem="None", cps="CNN", ln=2, hs=64),
}


def run_baselines(evaluator: Evaluator, names: Optional[List[str]] = None) -> List[BaselineEntry]:
    names = list(BASELINES) if names is None else names
    unknown = [name for name in names if name not in BASELINES]
    if unknown:
        raise KeyError(f"Unknown baseline(s): {', '.join(unknown)}")
    records = evaluator.evaluate_many([BASELINES[name] for name in names])
    entries = [
        BaselineEntry(name=name, genotype_hash=record.genotype_hash, measured_error=record.measured_error,
                      param_count=record.param_count, status=record.status)
        for name, record in zip(names, records)
    ]
    for entry in entries:
        logger.info(f"Baseline {entry.name}: error={entry.measured_error:.6g} params={entry.param_count}")
    return entries
