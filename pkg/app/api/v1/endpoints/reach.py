"""
Роутер анализа достижимости: трубка замкнутого контура и проверка Монте-Карло.
"""
import logging
from fastapi import APIRouter, HTTPException

from app.core.exceptions import IntervalError, ReachAbortError, ScenarioConfigError
from app.models.schemas.schemas import ReachRequest, ReachResponse
from app.services.benchmark_service import run_vehicle_benchmark

logger = logging.getLogger(__name__)

router = APIRouter(tags=["Reach"], prefix="/api/reach")


@router.post("/run", response_model=ReachResponse, summary="Построить трубку достижимости по сценарию")
async def run_reach(request: ReachRequest):
    """
    Строит трубку для сценария и проверяет включение траекторий Монте-Карло.
    Файлы не записываются; время выполнения не измеряется.
    """
    scenario = request.scenario.model_copy(update={'runtime_repeats': 0})
    try:
        result = run_vehicle_benchmark(scenario, mc_trajectories=request.mc_trajectories)
    except ReachAbortError as e:
        logger.error(f"❌ Верификация прервана: {e}")
        raise HTTPException(status_code=422, detail=str(e))
    except (IntervalError, ScenarioConfigError) as e:
        raise HTTPException(status_code=400, detail=str(e))

    metadata = {k: v for k, v in result.tube.metadata.items() if k != 'wall_clock_s'}
    metadata['min_speed'] = result.min_speed
    return ReachResponse(
        times=result.tube.times.tolist(),
        lower=result.tube.lower.tolist(),
        upper=result.tube.upper.tolist(),
        violations=result.report.total_violations,
        metadata=metadata,
    )
