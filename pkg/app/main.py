from fastapi import FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
import logging
from contextlib import asynccontextmanager
from pathlib import Path

from core.config import settings
from core.dependencies import setup_logging
from core.exceptions import PVNasError
from api.endpoints import forecast, search

# Setup logging
setup_logging()
logger = logging.getLogger(__name__)

RUN_FILES = ("pareto.csv", "history.jsonl")


def artifacts_ready(directory: Path) -> bool:
    """A finished run has left its Pareto front and history behind"""
    return all((directory / name).is_file() for name in RUN_FILES)


@asynccontextmanager
async def lifespan(app: FastAPI):
    logger.info(f"Starting {settings.app_name} {settings.app_version} ({settings.environment})")
    try:
        settings.ensure_dirs()
    except PVNasError as e:
        logger.error(f"Failed to start application: {str(e)}")
        raise
    if artifacts_ready(Path(settings.artifacts_dir)):
        logger.info(f"Serving run artifacts from {settings.artifacts_dir}")
    else:
        logger.warning(f"No finished run in {settings.artifacts_dir}; search endpoints answer 404 until one lands")

    yield

    logger.info(f"Shutting down {settings.app_name}...")


app = FastAPI(
    title=settings.app_name,
    version=settings.app_version,
    description="Read-only access to PV forecasting architecture search results, plus forecasts "
                "from exported Pareto architectures",
    license_info={"name": "MIT License"},
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=False,
    allow_methods=["GET", "POST"],
    allow_headers=["*"],
)

app.include_router(search.router, prefix="/api/v1", tags=["search"])
app.include_router(forecast.router, prefix="/api/v1", tags=["forecast"])


@app.get("/")
async def root():
    """Service index"""
    return {
        "message": settings.app_name,
        "version": settings.app_version,
        "endpoints": {
            "pareto": "/api/v1/search/pareto",
            "history": "/api/v1/search/history",
            "architecture": "/api/v1/search/architectures/{genotype_hash}",
            "forecast": "/api/v1/forecast/predict",
            "docs": "/docs",
        },
    }


@app.get("/health")
async def health_check():
    """Liveness plus whether a finished run is available to serve"""
    return {
        "status": "healthy",
        "service": settings.app_name,
        "artifacts_ready": artifacts_ready(Path(settings.artifacts_dir)),
    }


@app.exception_handler(HTTPException)
async def http_exception_handler(request, exc):
    return JSONResponse(
        status_code=exc.status_code,
        content={"error": exc.detail, "status_code": exc.status_code},
    )


@app.exception_handler(RequestValidationError)
async def validation_exception_handler(request, exc):
    first = exc.errors()[0] if exc.errors() else {}
    field = ".".join(str(part) for part in first.get("loc", ()))
    return JSONResponse(
        status_code=422,
        content={"error": f"{field}: {first.get('msg', 'invalid request')}", "status_code": 422},
    )


@app.exception_handler(PVNasError)
async def search_exception_handler(request, exc):
    """Domain errors from malformed artifacts or uploads are client errors"""
    logger.error(f"{request.url.path} failed: {str(exc)}")
    return JSONResponse(
        status_code=422,
        content={"error": str(exc), "status_code": 422},
    )


@app.exception_handler(Exception)
async def general_exception_handler(request, exc):
    logger.error(f"Unhandled exception on {request.url.path}: {str(exc)}")
    return JSONResponse(
        status_code=500,
        content={"error": "Internal server error"},
    )


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(
        "app.main:app",
        host=settings.host,
        port=settings.port,
        reload=settings.environment == "development",
        log_level=settings.log_level.lower(),
    )
