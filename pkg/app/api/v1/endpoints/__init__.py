"""API v1 Endpoints"""
from .general import router as general_router
from .intervals import router as intervals_router
from .networks import router as networks_router
from .reach import router as reach_router

__all__ = [
    "general_router",
    "intervals_router",
    "networks_router",
    "reach_router",
]
