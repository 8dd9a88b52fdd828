# metalr/main.py
import logging

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from metalr.core.logging_config import configure_logging
from metalr.core.settings import get_settings
from metalr.routers.experiment_router import router as experiment_router
from metalr.routers.report_router import router as report_router

# Configure logging at the earliest point
configure_logging()
logger = logging.getLogger(__name__)

app = FastAPI(
    title="MetaLR Experiment Service",
    version="1.0.0"
)


@app.on_event("startup")
async def startup_event():
    settings = get_settings()
    logger.info(f"Starting experiment service (output dir: {settings.output_dir}, workers: {settings.workers})")


@app.on_event("shutdown")
async def shutdown_event():
    logger.info("Experiment service shutting down.")


app.include_router(experiment_router)
app.include_router(report_router)


@app.get("/", tags=["Health Check"])
async def read_root():
    return JSONResponse(content={"message": "MetaLR experiment service is running"})
