from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
import os
import logging

from app.core.config import configure_logging
from app.core.exceptions import IntervalError, ReachAbortError, ScenarioConfigError

# Настройка логирования
configure_logging()
logger = logging.getLogger(__name__)

from app.api.v1.endpoints import (
    general_router,
    intervals_router,
    networks_router,
    reach_router,
)

tags_metadata = [
    {"name": "General", "description": "Базовые сервисные эндпоинты: корень и здоровье."},
    {"name": "Intervals", "description": "Естественные функции включения выражений, разбиение боксов."},
    {"name": "Networks", "description": "Оценки выхода нейросети: IBP и CROWN."},
    {"name": "Reach", "description": "Трубки достижимости замкнутого контура и проверка Монте-Карло."}
]

# FastAPI приложение
app = FastAPI(
    title="Interval Reach API",
    description="Интервальная арифметика, функции включения и анализ достижимости систем с нейросетевым управлением",
    version="1.0.0",
    openapi_tags=tags_metadata,
    docs_url="/docs",
    redoc_url="/redoc",
    openapi_url="/openapi.json",
)

# CORS (для удобной работы Swagger UI и внешних клиентов в DEV)
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(general_router)
app.include_router(intervals_router)
app.include_router(networks_router)
app.include_router(reach_router)


@app.exception_handler(IntervalError)
@app.exception_handler(ScenarioConfigError)
async def bad_input_handler(request, exc):
    return JSONResponse(status_code=400, content={"detail": str(exc), "type": type(exc).__name__})


@app.exception_handler(ReachAbortError)
async def reach_abort_handler(request, exc):
    logger.error(f"❌ Верификация прервана: {exc}")
    return JSONResponse(status_code=422, content={"detail": str(exc), "type": type(exc).__name__})


# Глобальный обработчик исключений для отладки
@app.exception_handler(Exception)
async def global_exception_handler(request, exc):
    logger.error(f"Необработанное исключение: {str(exc)}", exc_info=True)
    return JSONResponse(
        status_code=500,
        content={
            "detail": f"Внутренняя ошибка сервера: {str(exc)}",
            "type": type(exc).__name__
        }
    )


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(
        "app.main:app",
        host=os.getenv("APP_HOST", "0.0.0.0"),
        port=int(os.getenv("APP_PORT", 8000)),
        reload=True
    )
