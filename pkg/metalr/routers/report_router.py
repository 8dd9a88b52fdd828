import logging
from typing import List

from fastapi import APIRouter, HTTPException
from fastapi.concurrency import run_in_threadpool

from metalr.core.errors import MetaLRError
from metalr.models.schemas import CompareRequest, CompareRow
from metalr.services.experiment_service import compare

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/reports", tags=["Reports"])


@router.post("/compare", response_model=List[CompareRow])
async def compare_endpoint(request: CompareRequest) -> List[CompareRow]:
    """
    Compare saved run reports; the first one is the reference.
    """
    try:
        return await run_in_threadpool(compare, request.reports)
    except (MetaLRError, ValueError) as e:
        logger.warning(f"Rejected compare request: {e}")
        raise HTTPException(status_code=400, detail=f"{type(e).__name__}: {e}")
    except Exception as e:
        logger.error(f"Error comparing reports: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail="Internal error while comparing reports")
