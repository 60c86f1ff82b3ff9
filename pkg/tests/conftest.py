"""
Конфигурация для pytest тестов.
"""
import math

import numpy as np
import pytest

from app.services import interval_core as ic
from app.services.benchmark_service import vehicle_system
from app.services.expression_service import parse_recipe
from app.services.interval_tensor import Box
from app.services.neural_verify import generate_random_network
from app.services.reach_engine import ClosedLoopSetup, OpenLoopSystem


# Небольшой начальный бокс сценария автомобиля
VEHICLE_BOX = [
    [7.95, 8.05],
    [7.95, 8.05],
    [-2.0 * math.pi / 3.0 - 0.005, -2.0 * math.pi / 3.0 + 0.005],
    [1.995, 2.005],
]


@pytest.fixture(autouse=True)
def reset_inflation():
    """Раздувание концов - глобальная настройка; тесты не должны влиять друг на друга"""
    previous = ic.get_inflation()
    yield
    ic.set_inflation(previous)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


@pytest.fixture
def unit_box():
    return Box([-1.0, -1.0], [1.0, 1.0])


@pytest.fixture
def vehicle_box():
    return Box.from_pairs(VEHICLE_BOX)


@pytest.fixture
def small_net():
    """Сеть 4 -> 16 -> 16 -> 2 для быстрых тестов"""
    return generate_random_network([4, 16, 16, 2], seed=7)


@pytest.fixture
def vehicle_setup():
    net = generate_random_network([4, 100, 100, 2], seed=0)
    return ClosedLoopSetup(system=vehicle_system(), controller=net, control_period=0.25)


def linear_system(a: float) -> OpenLoopSystem:
    """ẋ = a·x + u"""
    recipe = parse_recipe(f"{a!r}*x + u", ['x', 'u'], name=f"linear(a={a})")
    return OpenLoopSystem(n=1, p=1, q=0, f=recipe, name='linear')
