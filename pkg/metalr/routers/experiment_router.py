# metalr/routers/experiment_router.py
import logging

from fastapi import APIRouter, HTTPException
from fastapi.concurrency import run_in_threadpool

from metalr.core.errors import MetaLRError
from metalr.models.schemas import AblationTable, ExperimentRequest, OracleResult, RunReport
from metalr.services import experiment_service
from metalr.services.config_service import parse_config
from metalr.services.oracle_service import run_oracle

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/experiments", tags=["Experiments"])


@router.post("/run", response_model=RunReport)
async def run_experiment_endpoint(request: ExperimentRequest) -> RunReport:
    """
    Run one scheme over the configured seeds and return the aggregated report.
    """
    try:
        config = parse_config(request.config)
        logger.info(f"Received run request for scheme '{config.scheme.kind}', seeds {config.run.seeds}")
        return await run_in_threadpool(experiment_service.run, config, request.emit)
    except MetaLRError as e:
        logger.warning(f"Rejected run request: {e}")
        raise HTTPException(status_code=400, detail=f"{type(e).__name__}: {e}")
    except Exception as e:
        logger.error(f"Error running experiment: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail="Internal error while running experiment")


@router.post("/ablate", response_model=AblationTable)
async def ablate_endpoint(request: ExperimentRequest) -> AblationTable:
    """Baseline plus the four MetaLR ablation rows."""
    try:
        config = parse_config(request.config)
        return await run_in_threadpool(experiment_service.ablation_grid, config, request.emit)
    except MetaLRError as e:
        logger.warning(f"Rejected ablation request: {e}")
        raise HTTPException(status_code=400, detail=f"{type(e).__name__}: {e}")
    except Exception as e:
        logger.error(f"Error running ablation: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail="Internal error while running ablation")


@router.post("/oracle", response_model=OracleResult)
async def oracle_endpoint(request: ExperimentRequest) -> OracleResult:
    try:
        config = parse_config(request.config)
        return await run_in_threadpool(run_oracle, config.oracle)
    except MetaLRError as e:
        logger.warning(f"Rejected oracle request: {e}")
        raise HTTPException(status_code=400, detail=f"{type(e).__name__}: {e}")
    except Exception as e:
        logger.error(f"Error running oracle: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail="Internal error while running oracle")
