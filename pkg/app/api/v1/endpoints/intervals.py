"""
Роутер интервальных вычислений: естественное включение выражения на боксе
и включение с равномерным разбиением.
"""
import logging
from fastapi import APIRouter, HTTPException

from app.core.exceptions import IntervalError
from app.models.schemas.schemas import (
    IntervalEvalRequest,
    IntervalEvalResponse,
    PartitionRequest,
    PartitionResponse,
)
from app.services.expression_service import parse_recipe
from app.services.inclusion_engine import natural_evaluate, partitioned_evaluate, sample_oracle
from app.services.interval_core import IntervalScalar, format_interval
from app.services.interval_tensor import Box

logger = logging.getLogger(__name__)

router = APIRouter(tags=["Intervals"], prefix="/api/intervals")


def _strings(box: Box):
    return [format_interval(IntervalScalar(lo, hi)) for lo, hi in zip(box.lower, box.upper)]


def _prepare(request: IntervalEvalRequest):
    recipe = parse_recipe(request.expression, request.input_names)
    box = Box.from_pairs(request.box)
    if box.dim != recipe.n_inputs:
        raise HTTPException(
            status_code=400,
            detail=f"Бокс размерности {box.dim}, а выражение имеет {recipe.n_inputs} входов: {list(recipe.input_names)}"
        )
    return recipe, box


@router.post("/eval", response_model=IntervalEvalResponse, summary="Естественное включение выражения на боксе")
async def evaluate_expression(request: IntervalEvalRequest):
    """
    Разбирает выражение и вычисляет его естественную функцию включения.
    Выходы возвращаются в текстовом виде "[lo, hi]" и как массивы концов.
    """
    try:
        recipe, box = _prepare(request)
        result = natural_evaluate(recipe, box)
    except IntervalError as e:
        raise HTTPException(status_code=400, detail=str(e))
    pairs = result.to_pairs()
    return IntervalEvalResponse(
        input_names=list(recipe.input_names),
        intervals=_strings(result),
        lower=[p[0] for p in pairs],
        upper=[p[1] for p in pairs],
        monotone=recipe.monotone,
    )


@router.post("/partition", response_model=PartitionResponse, summary="Включение с разбиением входного бокса")
async def evaluate_partitioned(request: PartitionRequest):
    try:
        recipe, box = _prepare(request)
        single = natural_evaluate(recipe, box)
        cells, hull = partitioned_evaluate(recipe, box, request.k)
        oracle = sample_oracle(recipe, box, request.samples, request.seed) if request.samples else None
    except IntervalError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return PartitionResponse(
        cells=len(cells),
        single=_strings(single),
        hull=_strings(hull),
        oracle=_strings(oracle) if oracle is not None else None,
    )
