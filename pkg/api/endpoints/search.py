from fastapi import APIRouter, HTTPException, Depends
from pathlib import Path
import logging

from core.dependencies import get_artifacts_dir
from core.exceptions import PVNasError
from models.response import ArchitectureManifest, HistoryResponse, ParetoResponse
from services.report_service import read_history, read_manifest, read_pareto_csv

router = APIRouter(prefix="/search")
logger = logging.getLogger(__name__)


@router.get("/pareto", response_model=ParetoResponse)
async def get_pareto(artifacts: Path = Depends(get_artifacts_dir)):
    """Pareto front of the finished run, revalidated for mutual non-domination"""
    path = artifacts / "pareto.csv"
    if not path.is_file():
        raise HTTPException(status_code=404, detail="pareto.csv not found")
    try:
        entries = read_pareto_csv(path)
    except PVNasError as e:
        logger.error(f"Error reading Pareto front: {str(e)}")
        raise HTTPException(status_code=422, detail=str(e))
    return ParetoResponse(count=len(entries), entries=entries)


@router.get("/history", response_model=HistoryResponse)
async def get_history(artifacts: Path = Depends(get_artifacts_dir)):
    """Per-iteration snapshots: best error, hypervolume and front"""
    path = artifacts / "history.jsonl"
    if not path.is_file():
        raise HTTPException(status_code=404, detail="history.jsonl not found")
    history = read_history(path)
    return HistoryResponse(iterations=len(history), history=history)


@router.get("/architectures/{genotype_hash}", response_model=ArchitectureManifest)
async def get_architecture(genotype_hash: str, artifacts: Path = Depends(get_artifacts_dir)):
    """Exported architecture description of one Pareto member"""
    if not genotype_hash.isalnum():
        raise HTTPException(status_code=400, detail="Invalid genotype hash")
    path = artifacts / "architectures" / genotype_hash / "arch.json"
    if not path.is_file():
        raise HTTPException(status_code=404, detail=f"Architecture {genotype_hash} not found")
    return read_manifest(path)
