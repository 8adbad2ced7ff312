from fastapi import APIRouter, HTTPException, Depends, UploadFile, File, Form
from pathlib import Path
import logging
import tempfile

from core.dependencies import get_artifacts_dir
from core.exceptions import PVNasError
from models.response import ForecastResponse
from services.dataset_service import load_csv, preprocess
from services.forecast_service import forecast_frame, rebuild_model
from services.report_service import load_weights, read_manifest

router = APIRouter(prefix="/forecast")
logger = logging.getLogger(__name__)


@router.post("/predict", response_model=ForecastResponse)
async def predict(
    file: UploadFile = File(...),
    genotype_hash: str = Form(...),
    artifacts: Path = Depends(get_artifacts_dir),
):
    """
    Forecast an uploaded CSV with an exported Pareto architecture.

    The CSV must use the `timestamp,<feature_1>,...` layout with the feature
    set the architecture was trained on.
    """
    if not genotype_hash.isalnum():
        raise HTTPException(status_code=400, detail="Invalid genotype hash")
    arch_path = artifacts / "architectures" / genotype_hash / "arch.json"
    if not arch_path.is_file():
        raise HTTPException(status_code=404, detail=f"Architecture {genotype_hash} not found")

    content = await file.read()
    if not content:
        raise HTTPException(status_code=400, detail="Uploaded file is empty")

    try:
        manifest = read_manifest(arch_path)
        model = rebuild_model(manifest, load_weights(arch_path.parent / manifest.weights_file))
        with tempfile.TemporaryDirectory() as tmp:
            csv_path = Path(tmp) / "upload.csv"
            csv_path.write_bytes(content)
            frame = preprocess(load_csv(csv_path, target=manifest.target_name))
        response, _ = forecast_frame(manifest, model, frame)
    except PVNasError as e:
        logger.error(f"Error forecasting with {genotype_hash}: {str(e)}")
        raise HTTPException(status_code=422, detail=str(e))
    return response
