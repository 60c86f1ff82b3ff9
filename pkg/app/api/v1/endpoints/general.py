from fastapi import APIRouter
from datetime import datetime, timezone

from app.core.config import config
from app.services.interval_core import get_inflation

router = APIRouter(tags=["General"])


@router.get("/", summary="Проверка работы API", description="Простой ответ для проверки, что сервис запущен")
async def root():
    return {"message": "Interval Reach API работает", "status": "OK"}


@router.get("/health", summary="Проверка состояния сервиса")
async def health_check():
    return {
        "status": "healthy",
        "inflate_ulps": get_inflation(),
        "max_workers": config.get('max_workers'),
        "timestamp": datetime.now(timezone.utc)
    }
