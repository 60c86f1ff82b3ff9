"""
Исключения библиотеки интервальной арифметики и движка достижимости.
"""
from typing import Optional


class IntervalError(ValueError):
    """Базовая ошибка интервальных вычислений"""


class InvalidIntervalError(IntervalError):
    """Нарушен инвариант lo <= hi (или конец интервала NaN)"""


class IntervalDomainError(IntervalError):
    """Интервал выходит за область определения функции (log, sqrt)"""

    def __init__(self, op: str, lo: float, hi: float):
        self.op = op
        self.lo = lo
        self.hi = hi
        super().__init__(f"{op}: интервал [{lo}, {hi}] вне области определения")


class UnboundedIntervalError(IntervalError):
    """Ширина/середина не определены для бесконечных концов"""


class ShapeMismatchError(IntervalError):
    """Несовместимые размерности или индекс вне диапазона"""


class ExpressionSyntaxError(IntervalError):
    """Ошибка разбора текстового выражения"""


class StageEvaluationError(IntervalError):
    """Ошибка на шаге композиции; хранит номер и имя шага"""

    def __init__(self, stage_index: int, stage_name: str, message: str):
        self.stage_index = stage_index
        self.stage_name = stage_name
        super().__init__(f"Шаг {stage_index} ({stage_name}): {message}")


class NetworkFormatError(IntervalError):
    """Некорректный файл весов или цепочка размерностей слоёв"""

    def __init__(self, message: str, layer_index: Optional[int] = None):
        self.layer_index = layer_index
        if layer_index is not None:
            message = f"Слой {layer_index}: {message}"
        super().__init__(message)


class LocalizationError(IntervalError):
    """Бокс не лежит в области локализации аффинных оценок (восстановимая ошибка)"""


class ReachAbortError(RuntimeError):
    """Прерывание верификации (полюс, неустойчивость)"""

    def __init__(self, message: str, time: Optional[float] = None):
        self.time = time
        super().__init__(message if time is None else f"t={time:.6g}: {message}")


class NonFiniteRateError(ReachAbortError):
    """Бесконечная/NaN скорость в функции вложения"""

    def __init__(self, message: str, time: Optional[float] = None, coordinate: Optional[int] = None):
        self.coordinate = coordinate
        super().__init__(message, time)


class EmbeddingInstabilityError(ReachAbortError):
    """После шага Эйлера нижняя граница превысила верхнюю"""


class ScenarioConfigError(ValueError):
    """Некорректная конфигурация сценария или аргументы CLI"""


class NonFiniteStageError(StageEvaluationError):
    """Шаг композиции дал бесконечную границу (полюс tan, деление на интервал с нулём)"""
