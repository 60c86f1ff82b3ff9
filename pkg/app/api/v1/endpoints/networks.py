"""
Роутер оценок выхода нейросети на боксе (IBP или CROWN).
"""
from fastapi import APIRouter, HTTPException

from app.core.exceptions import IntervalError
from app.models.schemas.schemas import NetworkBoundsRequest, NetworkBoundsResponse
from app.services.interval_core import IntervalScalar, format_interval
from app.services.interval_tensor import Box
from app.services.neural_verify import crown_bounds, ibp_bounds, localized_incl, network_from_file

router = APIRouter(tags=["Networks"], prefix="/api/networks")


@router.post("/bounds", response_model=NetworkBoundsResponse, summary="Оценки выхода сети на боксе")
async def network_bounds(request: NetworkBoundsRequest):
    try:
        net = network_from_file(request.network)
        box = Box.from_pairs(request.box)
        affine = None
        if request.method == 'crown':
            bounds = crown_bounds(net, box)
            result = localized_incl(bounds, box)
            affine = bounds.to_dict()
        else:
            result = ibp_bounds(net, box)
    except IntervalError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return NetworkBoundsResponse(
        method=request.method,
        intervals=[format_interval(IntervalScalar(lo, hi)) for lo, hi in zip(result.lower, result.upper)],
        lower=result.lower.tolist(),
        upper=result.upper.tolist(),
        affine=affine,
    )
