"""
Естественные функции включения композиций (f = e_ℓ ∘ … ∘ e₁).

Композиция хранится как лента шагов (stage tape). Регистры 0..n-1 - входы; каждый
шаг добавляет один регистр, вычисленный элементарной операцией interval_core от
более ранних регистров; outputs - индексы регистров, составляющих выход.
Одна и та же лента вычисляется в точечном режиме (вещественные векторы) и в
интервальном (боксы); оба режима векторизованы по пачке входов.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.config import config
from app.core.exceptions import (
    IntervalError,
    IntervalDomainError,
    NonFiniteStageError,
    ShapeMismatchError,
    StageEvaluationError,
    UnboundedIntervalError,
)
from app.services import interval_core as ic
from app.services.interval_tensor import Box, hull_bounds, split_uniform_bounds

logger = logging.getLogger(__name__)

Bounds = Tuple[np.ndarray, np.ndarray]


# Проверка области определения в точечном режиме
_POINT_DOMAIN = {
    'log': lambda x: x > 0.0,
    'sqrt': lambda x: x >= 0.0,
}


@dataclass(frozen=True)
class Stage:
    """
    Один шаг композиции.

    op: имя операции ('add', 'mul', 'sin', 'scale', 'pow_int', 'const', 'custom', ...)
    args: индексы регистров-аргументов
    params: c для add_const/scale/div_const, n для pow_int, value для const
    monotone: является ли функция включения шага монотонной
    point_fn / interval_fn: реализация пользовательского шага ('custom')
    """
    op: str
    args: Tuple[int, ...]
    params: Dict[str, Any] = field(default_factory=dict)
    name: str = ''
    monotone: bool = True
    point_fn: Optional[Callable[..., np.ndarray]] = None
    interval_fn: Optional[Callable[..., Bounds]] = None

    @property
    def label(self) -> str:
        return self.name or self.op

    def evaluate_bounds(self, operands: List[Bounds], size: int) -> Bounds:
        op = self.op
        if op == 'const':
            value = np.full(size, float(self.params['value']))
            return value, value.copy()
        if op == 'custom':
            return self.interval_fn(*[b for bounds in operands for b in bounds])
        if op in ic.BINARY_KERNELS:
            (alo, ahi), (blo, bhi) = operands
            return ic.BINARY_KERNELS[op](alo, ahi, blo, bhi)
        (lo, hi), = operands
        if op in ic.UNARY_KERNELS:
            return ic.UNARY_KERNELS[op](lo, hi)
        if op == 'add_const':
            return ic.add_const_kernel(lo, hi, self.params['c'])
        if op == 'scale':
            return ic.scale_kernel(self.params['c'], lo, hi)
        if op == 'div_const':
            return ic.div_const_kernel(lo, hi, self.params['c'])
        if op == 'pow_int':
            return ic.pow_int_kernel(lo, hi, self.params['n'])
        raise IntervalError(f"Неизвестная операция шага: {op}")

    def evaluate_point(self, operands: List[np.ndarray], size: int) -> np.ndarray:
        op = self.op
        if op == 'const':
            return np.full(size, float(self.params['value']))
        if op == 'custom':
            return self.point_fn(*operands)
        if op in ic.POINT_BINARY:
            return ic.POINT_BINARY[op](*operands)
        x, = operands
        if op in _POINT_DOMAIN and not np.all(_POINT_DOMAIN[op](x)):
            bad = float(x[~_POINT_DOMAIN[op](x)][0])
            raise IntervalDomainError(op, bad, bad)
        if op in ic.POINT_UNARY:
            return ic.POINT_UNARY[op](x)
        if op == 'add_const':
            return np.add(x, self.params['c'])
        if op == 'scale':
            return np.multiply(self.params['c'], x)
        if op == 'div_const':
            if self.params['c'] == 0:
                raise IntervalDomainError('div_const', float(np.min(x)), float(np.max(x)))
            return np.divide(x, self.params['c'])
        if op == 'pow_int':
            return np.power(x, int(self.params['n']))
        raise IntervalError(f"Неизвестная операция шага: {op}")


class ComposedFunction:
    """Композиция e_ℓ ∘ … ∘ e₁ с n входами и m выходами"""

    def __init__(self, n_inputs: int, stages: Sequence[Stage], outputs: Sequence[int],
                 input_names: Optional[Sequence[str]] = None, name: str = ''):
        self.n_inputs = int(n_inputs)
        self.stages: Tuple[Stage, ...] = tuple(stages)
        self.outputs: Tuple[int, ...] = tuple(int(o) for o in outputs)
        self.input_names: Tuple[str, ...] = tuple(input_names or [f"x{i + 1}" for i in range(self.n_inputs)])
        self.name = name
        if len(self.input_names) != self.n_inputs:
            raise ShapeMismatchError("Число имён входов не равно числу входов")
        if not self.outputs:
            raise IntervalError("Композиция должна иметь хотя бы один выход")
        n_registers = self.n_inputs
        for idx, stage in enumerate(self.stages):
            for a in stage.args:
                if not 0 <= a < n_registers:
                    raise StageEvaluationError(idx, stage.label, f"ссылка на несуществующий регистр {a}")
            n_registers += 1
        for o in self.outputs:
            if not 0 <= o < n_registers:
                raise IntervalError(f"Выход ссылается на несуществующий регистр {o}")

    @property
    def n_outputs(self) -> int:
        return len(self.outputs)

    @property
    def monotone(self) -> bool:
        """Композиция монотонна тогда и только тогда, когда монотонны все шаги"""
        return all(stage.monotone for stage in self.stages)

    def __repr__(self) -> str:
        return (f"ComposedFunction(name={self.name!r}, n_inputs={self.n_inputs}, "
                f"n_outputs={self.n_outputs}, stages={len(self.stages)})")

    def _run(self, registers: List[Any], size: int, interval: bool, require_finite: bool = False) -> List[Any]:
        for idx, stage in enumerate(self.stages):
            operands = [registers[a] for a in stage.args]
            try:
                with np.errstate(all='ignore'):
                    if interval:
                        result = stage.evaluate_bounds(operands, size)
                    else:
                        result = stage.evaluate_point(operands, size)
            except StageEvaluationError:
                raise
            except (IntervalError, ArithmeticError, ValueError) as e:
                raise StageEvaluationError(idx, stage.label, str(e)) from e
            if require_finite and not (np.isfinite(result[0]).all() and np.isfinite(result[1]).all()):
                raise NonFiniteStageError(idx, stage.label, "бесконечная граница интервала")
            registers.append(result)
        return registers

    def evaluate_bounds(self, lo: np.ndarray, hi: np.ndarray, require_finite: bool = False) -> Bounds:
        """
        Интервальный режим над пачкой боксов.

        Args:
            lo, hi: Массивы концов формы (N, n)
            require_finite: Прерывать на первом шаге с бесконечной границей (NonFiniteStageError)

        Returns:
            (lo, hi) формы (N, m)
        """
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        if lo.ndim != 2 or lo.shape[1] != self.n_inputs or lo.shape != hi.shape:
            raise ShapeMismatchError(f"Ожидались массивы формы (N, {self.n_inputs}), получено {lo.shape}")
        size = lo.shape[0]
        registers = [(lo[:, j], hi[:, j]) for j in range(self.n_inputs)]
        registers = self._run(registers, size, interval=True, require_finite=require_finite)
        out_lo = np.stack([np.broadcast_to(registers[o][0], (size,)) for o in self.outputs], axis=1)
        out_hi = np.stack([np.broadcast_to(registers[o][1], (size,)) for o in self.outputs], axis=1)
        return out_lo, out_hi

    def evaluate_points(self, x: np.ndarray) -> np.ndarray:
        """Точечный режим над пачкой точек формы (N, n) -> (N, m)"""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise ShapeMismatchError(f"Ожидался массив формы (N, {self.n_inputs}), получено {x.shape}")
        size = x.shape[0]
        registers = [x[:, j] for j in range(self.n_inputs)]
        registers = self._run(registers, size, interval=False)
        return np.stack([np.broadcast_to(registers[o], (size,)) for o in self.outputs], axis=1)


# ---------------------------------------------------------------------------
# Построитель композиций
# ---------------------------------------------------------------------------

class Var:
    """Символьный регистр композиции; операторы добавляют шаги в построитель"""

    __slots__ = ('builder', 'index')

    def __init__(self, builder: "RecipeBuilder", index: int):
        self.builder = builder
        self.index = index

    def _emit(self, op: str, *others: "Var", **params) -> "Var":
        return self.builder.emit(op, (self.index,) + tuple(o.index for o in others), **params)

    def __add__(self, other):
        if isinstance(other, Var):
            return self._emit('add', other)
        return self._emit('add_const', c=float(other))

    def __radd__(self, other):
        return self._emit('add_const', c=float(other))

    def __sub__(self, other):
        if isinstance(other, Var):
            return self._emit('sub', other)
        return self._emit('add_const', c=-float(other))

    def __rsub__(self, other):
        return (-self)._emit('add_const', c=float(other))

    def __mul__(self, other):
        if isinstance(other, Var):
            return self._emit('mul', other)
        return self._emit('scale', c=float(other))

    def __rmul__(self, other):
        return self._emit('scale', c=float(other))

    def __truediv__(self, other):
        if isinstance(other, Var):
            return self._emit('div', other)
        return self._emit('div_const', c=float(other))

    def __rtruediv__(self, other):
        return self._emit('recip')._emit('scale', c=float(other))

    def __neg__(self):
        return self._emit('neg')

    def __pow__(self, n):
        if int(n) != n or n < 1:
            raise IntervalError(f"Степень должна быть целой >= 1, получено {n}")
        if n == 1:
            return self
        return self._emit('pow_int', n=int(n))

    def apply(self, op: str) -> "Var":
        return self._emit(op)

    def sin(self):
        return self._emit('sin')

    def cos(self):
        return self._emit('cos')

    def tan(self):
        return self._emit('tan')

    def exp(self):
        return self._emit('exp')

    def log(self):
        return self._emit('log')

    def arctan(self):
        return self._emit('arctan')

    def sqrt(self):
        return self._emit('sqrt')

    def relu(self):
        return self._emit('relu')


class RecipeBuilder:
    """
    Построитель ленты шагов.

    Пример:
        b = RecipeBuilder(['x'])
        x, = b.inputs
        f = b.build([(x + 1) ** 2])
    """

    def __init__(self, input_names: Sequence[str]):
        self.input_names = list(input_names)
        self.stages: List[Stage] = []
        self.inputs: List[Var] = [Var(self, i) for i in range(len(self.input_names))]

    @property
    def n_registers(self) -> int:
        return len(self.input_names) + len(self.stages)

    def emit(self, op: str, args: Tuple[int, ...], **params) -> Var:
        self.stages.append(Stage(op=op, args=tuple(args), params=dict(params)))
        return Var(self, self.n_registers - 1)

    def const(self, value: float) -> Var:
        return self.emit('const', (), value=float(value))

    def custom(self, name: str, args: Sequence[Var], point_fn: Callable, interval_fn: Callable,
               monotone: bool) -> Var:
        """Пользовательский шаг со своей функцией включения; монотонность объявляет пользователь"""
        self.stages.append(Stage(
            op='custom', args=tuple(a.index for a in args), name=name, monotone=monotone,
            point_fn=point_fn, interval_fn=interval_fn,
        ))
        return Var(self, self.n_registers - 1)

    def build(self, outputs: Sequence[Union[Var, float]], name: str = '') -> ComposedFunction:
        indices = []
        for out in outputs:
            if not isinstance(out, Var):
                out = self.const(out)
            indices.append(out.index)
        return ComposedFunction(len(self.input_names), self.stages, indices, self.input_names, name)


# ---------------------------------------------------------------------------
# Операции движка
# ---------------------------------------------------------------------------

def natural_evaluate(f: ComposedFunction, x: Box) -> Box:
    """
    Естественная функция включения [e_ℓ]∘…∘[e₁]([x]).

    Args:
        f: Композиция
        x: Входной бокс размерности f.n_inputs

    Returns:
        Бокс, содержащий образ f([x])
    """
    if x.dim != f.n_inputs:
        raise ShapeMismatchError(f"Бокс размерности {x.dim} для функции с {f.n_inputs} входами")
    lo, hi = f.evaluate_bounds(x.lower[None, :], x.upper[None, :])
    return Box(lo[0], hi[0])


def point_evaluate(f: ComposedFunction, x) -> np.ndarray:
    """Точечное значение f(x); x - вектор (n,) или пачка (N, n)"""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != f.n_inputs:
            raise ShapeMismatchError(f"Точка размерности {x.shape[0]} для функции с {f.n_inputs} входами")
        return f.evaluate_points(x[None, :])[0]
    return f.evaluate_points(x)


def sample_points(x: Box, n_samples: int, seed: int) -> np.ndarray:
    """n_samples равномерных точек бокса (PCG64, детерминированно по seed)"""
    if not x.is_finite():
        raise UnboundedIntervalError("Выборка из бокса с бесконечными концами невозможна")
    rng = np.random.Generator(np.random.PCG64(seed))
    u = rng.random((int(n_samples), x.dim))
    points = x.lower + (x.upper - x.lower) * u
    return np.minimum(points, x.upper)


def sample_oracle(f: ComposedFunction, x: Box, n_samples: int, seed: Optional[int] = None) -> Box:
    """
    Оценка снизу точной функции включения: оболочка образов равномерной выборки.

    Args:
        f: Композиция
        x: Бокс
        n_samples: Число точек (>= 1)
        seed: Зерно генератора (по умолчанию из конфигурации)
    """
    if n_samples < 1:
        raise IntervalError("n_samples должен быть >= 1")
    seed = config.get('seed') if seed is None else seed
    images = point_evaluate(f, sample_points(x, n_samples, seed))
    return Box(images.min(axis=0), images.max(axis=0))


def evaluate_cells(f: ComposedFunction, lo: np.ndarray, hi: np.ndarray,
                   max_workers: Optional[int] = None) -> Bounds:
    """Пачка боксов, опционально по частям в пуле потоков; порядок результатов - по индексу"""
    max_workers = max_workers or config.get('max_workers')
    if max_workers <= 1 or lo.shape[0] < 2:
        return f.evaluate_bounds(lo, hi)
    chunks = np.array_split(np.arange(lo.shape[0]), max_workers)
    chunks = [c for c in chunks if c.size]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        parts = list(pool.map(lambda c: f.evaluate_bounds(lo[c], hi[c]), chunks))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def partitioned_evaluate(f: ComposedFunction, x: Box, k: Sequence[int],
                         max_workers: Optional[int] = None) -> Tuple[List[Box], Box]:
    """
    Равномерное разбиение входного бокса, естественное включение на каждой ячейке и оболочка.

    Returns:
        (боксы ячеек в C order, оболочка)
    """
    cell_lo, cell_hi = split_uniform_bounds(x, k)
    out_lo, out_hi = evaluate_cells(f, cell_lo, cell_hi, max_workers)
    logger.debug(f"partitioned_evaluate: {cell_lo.shape[0]} ячеек")
    cells = [Box(out_lo[j], out_hi[j]) for j in range(out_lo.shape[0])]
    return cells, hull_bounds(out_lo, out_hi)


def compare_decompositions(recipes: Dict[str, ComposedFunction], box: Box, k: Sequence[int],
                           n_samples: int, seed: int) -> Dict[str, Any]:
    """
    Сравнение нескольких разложений одной функции на одном боксе.

    Returns:
        {'oracle': Box, 'samples': точки, 'images': образы, 'decompositions': {имя: {...}}}
    """
    names = list(recipes)
    if not names:
        raise IntervalError("Нужно хотя бы одно разложение")
    points = sample_points(box, n_samples, seed)
    images = point_evaluate(recipes[names[0]], points)
    oracle = Box(images.min(axis=0), images.max(axis=0))

    report: Dict[str, Any] = {'oracle': oracle, 'samples': points, 'images': images, 'decompositions': {}}
    for name in names:
        f = recipes[name]
        single = natural_evaluate(f, box)
        cells, partition_hull = partitioned_evaluate(f, box, k)
        own_images = point_evaluate(f, points)
        cell_lo = np.stack([c.lower for c in cells])
        cell_hi = np.stack([c.upper for c in cells])
        in_union = np.array([
            bool((((cell_lo <= y) & (y <= cell_hi)).all(axis=1)).any()) for y in own_images
        ])
        report['decompositions'][name] = {
            'single': single,
            'partition_hull': partition_hull,
            'cells': cells,
            'single_width': single.width(),
            'partition_width': partition_hull.width(),
            'samples_in_single': bool(single.contains_points(own_images).all()),
            'samples_in_partition_hull': bool(partition_hull.contains_points(own_images).all()),
            'samples_in_cell_union': bool(in_union.all()),
            'oracle_in_single': oracle.subset(single),
            'partition_in_single': partition_hull.subset(single),
        }
    return report


def audit_monotone(stage: Stage, n_args: int = 1, trials: int = 1000, seed: int = 0,
                   scale: float = 10.0) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """
    Проверка объявленной монотонности шага на вложенных парах боксов.

    Returns:
        Список нарушений (inner_lo, inner_hi, outer_lo, outer_hi); пустой - нарушений нет
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    a = rng.uniform(-scale, scale, size=(trials, n_args))
    b = rng.uniform(-scale, scale, size=(trials, n_args))
    outer_lo, outer_hi = np.minimum(a, b), np.maximum(a, b)
    t1 = rng.random((trials, n_args))
    t2 = rng.random((trials, n_args))
    width = outer_hi - outer_lo
    inner_lo = outer_lo + width * np.minimum(t1, t2)
    inner_lo = np.minimum(inner_lo, outer_hi)
    inner_hi = np.clip(outer_lo + width * np.maximum(t1, t2), inner_lo, outer_hi)

    out_in = stage.evaluate_bounds([(inner_lo[:, j], inner_hi[:, j]) for j in range(n_args)], trials)
    out_out = stage.evaluate_bounds([(outer_lo[:, j], outer_hi[:, j]) for j in range(n_args)], trials)
    bad = (out_in[0] < out_out[0]) | (out_in[1] > out_out[1])
    failures = [(inner_lo[i], inner_hi[i], outer_lo[i], outer_hi[i]) for i in np.flatnonzero(bad)]
    if failures:
        logger.warning(f"⚠️ Шаг {stage.label}: {len(failures)} нарушений монотонности из {trials}")
    return failures
