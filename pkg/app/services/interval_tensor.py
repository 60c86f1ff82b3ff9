"""
Многомерные интервальные массивы.

IntervalTensor хранит два неизменяемых массива numpy (нижние и верхние концы) и
поднимает ядра interval_core на тензоры поэлементно с broadcasting по правилу
хвостовых размерностей. Box - тензор ранга 1 (интервальный вектор [x̲, x̄]).
"""
import itertools
import logging
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.exceptions import (
    IntervalError,
    InvalidIntervalError,
    ShapeMismatchError,
    UnboundedIntervalError,
    ExpressionSyntaxError,
)
from app.services import interval_core as ic
from app.services.interval_core import IntervalScalar

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]

# Операции с вещественным параметром: имя -> (ядро, имя параметра)
_PARAM_KERNELS: Dict[str, Tuple[Callable, str]] = {
    'add_const': (lambda lo, hi, c: ic.add_const_kernel(lo, hi, c), 'c'),
    'scale': (lambda lo, hi, c: ic.scale_kernel(c, lo, hi), 'c'),
    'div_const': (lambda lo, hi, c: ic.div_const_kernel(lo, hi, c), 'c'),
    'pow_int': (lambda lo, hi, n: ic.pow_int_kernel(lo, hi, n), 'n'),
}


def _validated(lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if lo.shape != hi.shape:
        raise ShapeMismatchError(f"Формы концов не совпадают: {lo.shape} и {hi.shape}")
    if np.isnan(lo).any() or np.isnan(hi).any():
        raise InvalidIntervalError("Конец интервала NaN")
    bad = lo > hi
    if bad.any():
        idx = np.unravel_index(int(np.flatnonzero(bad)[0]), lo.shape)
        raise InvalidIntervalError(
            f"Нижний конец больше верхнего в позиции {tuple(int(i) for i in idx)}: "
            f"[{lo[idx]}, {hi[idx]}]"
        )
    lo.setflags(write=False)
    hi.setflags(write=False)
    return lo, hi


class IntervalTensor:
    """Тензор интервалов формы shape (хранение по строкам, C order)"""

    __slots__ = ('_lo', '_hi')
    __array_priority__ = 1000

    def __init__(self, lo: ArrayLike, hi: Optional[ArrayLike] = None):
        lo = np.array(lo, dtype=np.float64)
        hi = lo.copy() if hi is None else np.array(hi, dtype=np.float64)
        if lo.ndim == 0:
            raise ShapeMismatchError("IntervalTensor требует ранг >= 1 (для скаляра используйте IntervalScalar)")
        self._lo, self._hi = _validated(lo, hi)

    @classmethod
    def point(cls, x: ArrayLike) -> "IntervalTensor":
        return cls(x, x)

    @classmethod
    def from_scalars(cls, items: Sequence[IntervalScalar], shape: Optional[Sequence[int]] = None) -> "IntervalTensor":
        lo = np.array([a.lo for a in items], dtype=np.float64)
        hi = np.array([a.hi for a in items], dtype=np.float64)
        if shape is not None:
            if int(np.prod(shape)) != lo.size:
                raise ShapeMismatchError(f"Длина данных {lo.size} не равна произведению формы {list(shape)}")
            lo = lo.reshape(shape)
            hi = hi.reshape(shape)
        return cls(lo, hi)

    @property
    def lo(self) -> np.ndarray:
        return self._lo

    @property
    def hi(self) -> np.ndarray:
        return self._hi

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._lo.shape

    @property
    def ndim(self) -> int:
        return self._lo.ndim

    @property
    def size(self) -> int:
        return self._lo.size

    @property
    def data(self) -> List[IntervalScalar]:
        """Плоский список элементов в порядке строк"""
        return [IntervalScalar(a, b) for a, b in zip(self._lo.ravel(), self._hi.ravel())]

    def is_degenerate(self) -> bool:
        return bool(np.array_equal(self._lo, self._hi))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self._lo).all() and np.isfinite(self._hi).all())

    def widths(self) -> np.ndarray:
        if not self.is_finite():
            raise UnboundedIntervalError("Ширина не определена для бесконечных концов")
        return self._hi - self._lo

    def midpoints(self) -> np.ndarray:
        if not self.is_finite():
            raise UnboundedIntervalError("Середина не определена для бесконечных концов")
        return 0.5 * (self._lo + self._hi)

    def reshape(self, *shape) -> "IntervalTensor":
        return make_tensor(self._lo.reshape(*shape), self._hi.reshape(*shape))

    def subset(self, other: "IntervalTensor") -> bool:
        if self.shape != other.shape:
            raise ShapeMismatchError(f"Формы не совпадают: {self.shape} и {other.shape}")
        return bool((other.lo <= self._lo).all() and (self._hi <= other.hi).all())

    def __len__(self) -> int:
        return self.shape[0]

    def __getitem__(self, idx) -> Union["IntervalTensor", IntervalScalar]:
        lo = self._lo[idx]
        hi = self._hi[idx]
        if np.ndim(lo) == 0:
            return IntervalScalar(float(lo), float(hi))
        return make_tensor(lo, hi)

    def __eq__(self, other) -> bool:
        if not isinstance(other, IntervalTensor):
            return NotImplemented
        return (
            self.shape == other.shape
            and bool(np.array_equal(self._lo, other.lo))
            and bool(np.array_equal(self._hi, other.hi))
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"{type(self).__name__}(lo={self._lo.tolist()}, hi={self._hi.tolist()})"

    # --- операторы -------------------------------------------------------

    def __add__(self, other):
        if _is_real(other):
            return map_elementwise('add_const', self, c=float(other))
        return map_elementwise('add', self, as_tensor(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if _is_real(other):
            return map_elementwise('add_const', self, c=-float(other))
        return map_elementwise('sub', self, as_tensor(other))

    def __rsub__(self, other):
        if _is_real(other):
            return map_elementwise('add_const', -self, c=float(other))
        return map_elementwise('sub', as_tensor(other), self)

    def __mul__(self, other):
        if _is_real(other):
            return map_elementwise('scale', self, c=float(other))
        return map_elementwise('mul', self, as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if _is_real(other):
            return map_elementwise('div_const', self, c=float(other))
        return map_elementwise('div', self, as_tensor(other))

    def __rtruediv__(self, other):
        return map_elementwise('div', as_tensor(other), self)

    def __neg__(self):
        return map_elementwise('neg', self)

    def __pow__(self, n: int):
        return map_elementwise('pow_int', self, n=n)

    def __matmul__(self, other):
        return matmul_interval(self, as_tensor(other))

    def __rmatmul__(self, other):
        return matmul_interval(as_tensor(other), self)

    # --- сериализация ----------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        """{"shape": [...], "data": вложенные списки пар [lo, hi]}; бесконечности как строки"""
        pairs = np.stack([self._lo, self._hi], axis=-1).tolist()
        return {'shape': list(self.shape), 'data': _encode_infinities(pairs)}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "IntervalTensor":
        try:
            shape = [int(s) for s in payload['shape']]
            pairs = np.array(_decode_infinities(payload['data']), dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise ExpressionSyntaxError(f"Некорректное представление тензора: {e}")
        if any(s < 1 for s in shape) or pairs.shape != tuple(shape) + (2,):
            raise ShapeMismatchError(f"Данные формы {pairs.shape[:-1]} не соответствуют shape={shape}")
        tensor = make_tensor(pairs[..., 0], pairs[..., 1])
        if cls is Box and not isinstance(tensor, Box):
            raise ShapeMismatchError("Box должен иметь ранг 1")
        return tensor


class Box(IntervalTensor):
    """Интервальный вектор [x̲, x̄] ⊂ ℝⁿ"""

    __slots__ = ()

    def __init__(self, lower: ArrayLike, upper: Optional[ArrayLike] = None):
        super().__init__(lower, upper)
        if self.ndim != 1:
            raise ShapeMismatchError(f"Box должен иметь ранг 1, получена форма {self.shape}")

    @classmethod
    def from_center(cls, center: ArrayLike, radius: Union[float, ArrayLike]) -> "Box":
        center = np.asarray(center, dtype=np.float64)
        radius = np.broadcast_to(np.asarray(radius, dtype=np.float64), center.shape)
        return cls(center - radius, center + radius)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> "Box":
        arr = np.array(_decode_infinities(list(pairs)), dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ShapeMismatchError("Ожидался список пар [lo, hi]")
        return cls(arr[:, 0], arr[:, 1])

    @classmethod
    def from_string(cls, text: str) -> "Box":
        """
        Разбирает бокс вида "l1,u1;l2,u2;...".

        Args:
            text: Строка координат через ';', концы через ','
        """
        lower, upper = [], []
        for part in text.strip().split(';'):
            tokens = part.split(',')
            if len(tokens) != 2:
                raise ExpressionSyntaxError(f"Координата бокса должна быть 'lo,hi', получено '{part}'")
            lower.append(ic.parse_endpoint(tokens[0]))
            upper.append(ic.parse_endpoint(tokens[1]))
        return cls(lower, upper)

    @property
    def lower(self) -> np.ndarray:
        return self._lo

    @property
    def upper(self) -> np.ndarray:
        return self._hi

    @property
    def dim(self) -> int:
        return self._lo.shape[0]

    def contains_point(self, x: ArrayLike) -> bool:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ShapeMismatchError(f"Точка размерности {x.shape} для бокса размерности {self.dim}")
        return bool(((self._lo <= x) & (x <= self._hi)).all())

    def contains_points(self, points: ArrayLike) -> np.ndarray:
        """Булев массив: какие строки points лежат в боксе"""
        points = np.asarray(points, dtype=np.float64)
        return ((self._lo <= points) & (points <= self._hi)).all(axis=-1)

    def width(self) -> np.ndarray:
        return self.widths()

    def midpoint(self) -> np.ndarray:
        return self.midpoints()

    def to_pairs(self) -> List[List[Any]]:
        return _encode_infinities(np.stack([self._lo, self._hi], axis=-1).tolist())

    def to_string(self) -> str:
        return ';'.join(
            f"{ic.format_endpoint(a)},{ic.format_endpoint(b)}" for a, b in zip(self._lo, self._hi)
        )


def make_tensor(lo: np.ndarray, hi: np.ndarray) -> IntervalTensor:
    """Box для ранга 1, IntervalTensor для остальных"""
    lo = np.asarray(lo, dtype=np.float64)
    if lo.ndim == 1:
        return Box(lo, hi)
    return IntervalTensor(lo, hi)


def _is_real(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool)


def as_tensor(x) -> IntervalTensor:
    if isinstance(x, IntervalTensor):
        return x
    if isinstance(x, IntervalScalar):
        return IntervalTensor([x.lo], [x.hi])
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return make_tensor(arr, arr)


def _encode_infinities(value):
    if isinstance(value, list):
        return [_encode_infinities(v) for v in value]
    if value == np.inf:
        return 'inf'
    if value == -np.inf:
        return '-inf'
    return value


def _decode_infinities(value):
    if isinstance(value, list):
        return [_decode_infinities(v) for v in value]
    if isinstance(value, str):
        return ic.parse_endpoint(value)
    return value


# ---------------------------------------------------------------------------
# Операции над тензорами
# ---------------------------------------------------------------------------

def map_elementwise(op: Union[str, Callable], t: IntervalTensor, t2: Optional[IntervalTensor] = None,
                    **params) -> IntervalTensor:
    """
    Поэлементное применение операции interval_core к тензору (или паре тензоров).

    Args:
        op: Имя операции ('add', 'mul', 'sin', 'exp', 'scale', 'pow_int', ...) или ядро (lo, hi) -> (lo, hi)
        t: Первый операнд
        t2: Второй операнд для бинарных операций (broadcasting по хвостовым размерностям)
        **params: c для add_const/scale/div_const, n для pow_int

    Returns:
        Тензор формы broadcast(t.shape, t2.shape)
    """
    if callable(op):
        if t2 is None:
            lo, hi = op(t.lo, t.hi, **params)
        else:
            lo, hi, lo2, hi2 = _broadcast_pair(t, t2)
            lo, hi = op(lo, hi, lo2, hi2, **params)
        return make_tensor(lo, hi)

    if op in ic.BINARY_KERNELS:
        if t2 is None:
            raise IntervalError(f"Операция {op} требует два операнда")
        lo, hi, lo2, hi2 = _broadcast_pair(t, t2)
        return make_tensor(*ic.BINARY_KERNELS[op](lo, hi, lo2, hi2))
    if t2 is not None:
        raise IntervalError(f"Операция {op} унарная")
    if op in ic.UNARY_KERNELS:
        return make_tensor(*ic.UNARY_KERNELS[op](t.lo, t.hi))
    if op in _PARAM_KERNELS:
        kernel, name = _PARAM_KERNELS[op]
        if name not in params:
            raise IntervalError(f"Операция {op} требует параметр {name}")
        return make_tensor(*kernel(t.lo, t.hi, params[name]))
    raise IntervalError(f"Неизвестная операция: {op}")


def _broadcast_pair(a: IntervalTensor, b: IntervalTensor):
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"Формы {a.shape} и {b.shape} несовместимы для broadcasting")
    return (
        np.broadcast_to(a.lo, shape), np.broadcast_to(a.hi, shape),
        np.broadcast_to(b.lo, shape), np.broadcast_to(b.hi, shape),
    )


def matmul_interval(A: IntervalTensor, B: IntervalTensor) -> IntervalTensor:
    """
    Интервальное произведение матриц: [·]_ij = Σ_k [a_ik] * [b_kj].

    Суммирование строго по возрастанию k, начиная с произведения при k = 0, поэтому
    результат детерминирован. B ранга 1 трактуется как столбец, результат - Box.
    """
    if A.ndim != 2:
        raise ShapeMismatchError(f"Левый операнд должен быть матрицей, получена форма {A.shape}")
    vector = B.ndim == 1
    blo = B.lo.reshape(-1, 1) if vector else B.lo
    bhi = B.hi.reshape(-1, 1) if vector else B.hi
    if blo.ndim != 2:
        raise ShapeMismatchError(f"Правый операнд должен иметь ранг 1 или 2, получена форма {B.shape}")
    if A.shape[1] != blo.shape[0]:
        raise ShapeMismatchError(f"Внутренние размерности не совпадают: {A.shape} @ {B.shape}")

    acc_lo, acc_hi = matmul_bounds(A.lo, A.hi, blo, bhi)
    if vector:
        return Box(acc_lo[:, 0], acc_hi[:, 0])
    return IntervalTensor(acc_lo, acc_hi)


def matmul_bounds(alo, ahi, blo, bhi):
    """Ядро matmul_interval над массивами концов (p столбцов A, p строк B)"""
    p = alo.shape[1]
    acc_lo, acc_hi = ic.mul_kernel(alo[:, 0:1], ahi[:, 0:1], blo[0:1, :], bhi[0:1, :])
    for k in range(1, p):
        plo, phi = ic.mul_kernel(alo[:, k:k + 1], ahi[:, k:k + 1], blo[k:k + 1, :], bhi[k:k + 1, :])
        acc_lo, acc_hi = ic.add_kernel(acc_lo, acc_hi, plo, phi)
    return acc_lo, acc_hi


def replace_component(v: ArrayLike, i: int, w: ArrayLike) -> np.ndarray:
    """v_{i:w}: копия v с i-й координатой (с нуля), взятой из w"""
    v = np.array(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.shape != w.shape or v.ndim != 1:
        raise ShapeMismatchError(f"Векторы разной длины: {v.shape} и {w.shape}")
    if not 0 <= i < v.shape[0]:
        raise ShapeMismatchError(f"Индекс {i} вне диапазона [0, {v.shape[0]})")
    v[i] = w[i]
    return v


def face_box(b: Box, i: int, side: str) -> Box:
    """
    Грань бокса по координате i.

    lower: [x̲, x̄_{i:x̲}] (верхний конец i-й координаты прижат к нижнему);
    upper: [x̲_{i:x̄}, x̄].
    """
    if side == 'lower':
        return Box(b.lower, replace_component(b.upper, i, b.lower))
    if side == 'upper':
        return Box(replace_component(b.lower, i, b.upper), b.upper)
    raise IntervalError(f"side должен быть 'lower' или 'upper', получено '{side}'")


def stack_faces(b: Box) -> IntervalTensor:
    """Все 2n граней: строки 0..n-1 - нижние грани, n..2n-1 - верхние"""
    n = b.dim
    eye = np.eye(n, dtype=bool)
    lo = np.broadcast_to(b.lower, (n, n))
    hi = np.broadcast_to(b.upper, (n, n))
    lower_faces_hi = np.where(eye, lo, hi)
    upper_faces_lo = np.where(eye, hi, lo)
    return IntervalTensor(
        np.concatenate([lo, upper_faces_lo], axis=0),
        np.concatenate([lower_faces_hi, hi], axis=0),
    )


def hull(boxes: Sequence[IntervalTensor]) -> IntervalTensor:
    """Покомпонентный минимум нижних и максимум верхних концов"""
    if not boxes:
        raise IntervalError("hull: пустой список")
    shape = boxes[0].shape
    for b in boxes:
        if b.shape != shape:
            raise ShapeMismatchError(f"hull: формы {shape} и {b.shape} не совпадают")
    lo = np.min(np.stack([b.lo for b in boxes]), axis=0)
    hi = np.max(np.stack([b.hi for b in boxes]), axis=0)
    return make_tensor(lo, hi)


def hull_bounds(lo: np.ndarray, hi: np.ndarray) -> Box:
    """Оболочка пачки боксов, заданной массивами (N, n)"""
    return Box(np.min(lo, axis=0), np.max(hi, axis=0))


def _split_edges(lo: float, hi: float, k: int) -> np.ndarray:
    edges = lo + (hi - lo) * (np.arange(k + 1, dtype=np.float64) / k)
    edges = np.minimum(edges, hi)
    edges[0] = lo
    edges[-1] = hi
    return edges


def split_uniform_bounds(b: Box, k: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Равномерное разбиение бокса в виде массивов концов формы (∏kᵢ, n).

    Ячейки перечисляются в C order по индексам осей; соседние ячейки делят грань.
    """
    k = [int(c) for c in k]
    if len(k) != b.dim:
        raise ShapeMismatchError(f"Число делений {len(k)} не равно размерности бокса {b.dim}")
    if any(c < 1 for c in k):
        raise IntervalError(f"Число делений по каждой оси должно быть >= 1: {k}")
    if not b.is_finite():
        raise UnboundedIntervalError("Нельзя разбить бокс с бесконечными концами")

    edges = [_split_edges(float(b.lower[d]), float(b.upper[d]), k[d]) for d in range(b.dim)]
    index = np.array(list(itertools.product(*[range(c) for c in k])), dtype=np.intp).reshape(-1, b.dim)
    lo = np.empty(index.shape, dtype=np.float64)
    hi = np.empty(index.shape, dtype=np.float64)
    for d in range(b.dim):
        lo[:, d] = edges[d][index[:, d]]
        hi[:, d] = edges[d][index[:, d] + 1]
    return lo, hi


def split_uniform(b: Box, k: Sequence[int]) -> List[Box]:
    lo, hi = split_uniform_bounds(b, k)
    logger.debug(f"Разбиение бокса размерности {b.dim} на {lo.shape[0]} ячеек")
    return [Box(lo[j], hi[j]) for j in range(lo.shape[0])]
