"""
Ядро интервальной арифметики.

Тип IntervalScalar и точные (tight) функции включения элементарных операций:
сложение, вычитание, умножение, обратная величина, целые степени, монотонные функции
(exp, log, arctan, sqrt), sin/cos/tan.

Каждая операция реализована как векторизованное ядро numpy над массивами нижних и
верхних концов: ядро принимает (lo, hi[, lo2, hi2]) и возвращает (lo, hi).
IntervalScalar и IntervalTensor вызывают одни и те же ядра, поэтому скалярный и
тензорный режимы дают побитово одинаковые концы.

Направленное округление не используется (округление к ближайшему); опционально
концы можно раздуть на k ulp (настройка inflate_ulps).
"""
import math
import re
import logging
from functools import partial
from typing import Callable, Dict, Tuple, Union

import numpy as np

from app.core.config import config
from app.core.exceptions import (
    IntervalError,
    InvalidIntervalError,
    IntervalDomainError,
    UnboundedIntervalError,
    ExpressionSyntaxError,
)

logger = logging.getLogger(__name__)

Bounds = Tuple[np.ndarray, np.ndarray]
Real = Union[int, float, np.floating]

PI = np.pi
HALF_PI = 0.5 * np.pi
TWO_PI = 2.0 * np.pi

_inflate_ulps = int(config.get('inflate_ulps'))


def set_inflation(ulps: int) -> None:
    """
    Включает/выключает раздувание концов результатов на k ulp.

    Args:
        ulps: Количество ulp (0 = выключено)
    """
    global _inflate_ulps
    if ulps < 0:
        raise IntervalError("inflate_ulps должен быть >= 0")
    _inflate_ulps = int(ulps)
    logger.info(f"Раздувание концов интервалов: {_inflate_ulps} ulp")


def get_inflation() -> int:
    return _inflate_ulps


def _finish(lo: np.ndarray, hi: np.ndarray) -> Bounds:
    if not _inflate_ulps:
        return lo, hi
    k = float(_inflate_ulps)
    with np.errstate(invalid='ignore'):
        lo = np.where(np.isfinite(lo), lo - k * np.spacing(np.abs(lo)), lo)
        hi = np.where(np.isfinite(hi), hi + k * np.spacing(np.abs(hi)), hi)
    return lo, hi


def _product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # 0 * inf = 0 в интервальной арифметике
    with np.errstate(invalid='ignore'):
        p = np.multiply(a, b)
    return np.where(np.isnan(p), 0.0, p)


# ---------------------------------------------------------------------------
# Векторизованные ядра
# ---------------------------------------------------------------------------

def add_kernel(alo, ahi, blo, bhi) -> Bounds:
    return _finish(np.add(alo, blo), np.add(ahi, bhi))


def sub_kernel(alo, ahi, blo, bhi) -> Bounds:
    return _finish(np.subtract(alo, bhi), np.subtract(ahi, blo))


def neg_kernel(lo, hi) -> Bounds:
    return _finish(np.negative(hi), np.negative(lo))


def add_const_kernel(lo, hi, c: Real) -> Bounds:
    return _finish(np.add(lo, c), np.add(hi, c))


def scale_kernel(c: Real, lo, hi) -> Bounds:
    """c*[a]: при c < 0 концы меняются местами"""
    p = _product(c, lo)
    q = _product(c, hi)
    if c >= 0:
        return _finish(p, q)
    return _finish(q, p)


def div_const_kernel(lo, hi, c: Real) -> Bounds:
    """[a]/c без промежуточного 1/c: концы равны точным образам"""
    if c == 0:
        raise IntervalDomainError("div_const", float(np.min(lo)), float(np.max(hi)))
    p = np.divide(lo, c)
    q = np.divide(hi, c)
    if c > 0:
        return _finish(p, q)
    return _finish(q, p)


def mul_kernel(alo, ahi, blo, bhi) -> Bounds:
    """[a]*[b]: минимум и максимум четырёх произведений концов"""
    p1 = _product(alo, blo)
    p2 = _product(alo, bhi)
    p3 = _product(ahi, blo)
    p4 = _product(ahi, bhi)
    lo = np.minimum(np.minimum(p1, p2), np.minimum(p3, p4))
    hi = np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))
    return _finish(lo, hi)


def recip_kernel(lo, hi) -> Bounds:
    """1/[a]: [1/ā, 1/a̲] если 0 ∉ [a], иначе [-inf, inf]"""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    zero_in = (lo <= 0.0) & (hi >= 0.0)
    with np.errstate(divide='ignore'):
        rlo = np.divide(1.0, hi)
        rhi = np.divide(1.0, lo)
    rlo = np.where(zero_in, -np.inf, rlo)
    rhi = np.where(zero_in, np.inf, rhi)
    return _finish(rlo, rhi)


def div_kernel(alo, ahi, blo, bhi) -> Bounds:
    rlo, rhi = recip_kernel(blo, bhi)
    return mul_kernel(alo, ahi, rlo, rhi)


def intersect_kernel(alo, ahi, blo, bhi) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Пересечение без раздувания; третий массив - маска пустых координат"""
    lo = np.maximum(alo, blo)
    hi = np.minimum(ahi, bhi)
    return lo, hi, lo > hi


def pow_int_kernel(lo, hi, n: int) -> Bounds:
    """[a]^n для целого n >= 1 (чётный и нечётный случаи)"""
    if int(n) != n or n < 1:
        raise IntervalError(f"pow_int: показатель должен быть целым >= 1, получено {n}")
    n = int(n)
    plo = np.power(lo, n)
    phi = np.power(hi, n)
    if n % 2 == 1:
        return _finish(plo, phi)
    lo = np.asarray(lo)
    hi = np.asarray(hi)
    zero_in = (lo <= 0.0) & (hi >= 0.0)
    out_lo = np.where(zero_in, 0.0, np.minimum(plo, phi))
    out_hi = np.maximum(plo, phi)
    return _finish(out_lo, out_hi)


def _relu(x):
    return np.maximum(x, 0.0)


# Монотонно возрастающие функции: (функция, проверка области по нижнему концу)
MONOTONE_FUNCTIONS: Dict[str, Tuple[Callable, Callable]] = {
    'exp': (np.exp, None),
    'log': (np.log, lambda lo: lo > 0.0),
    'arctan': (np.arctan, None),
    'sqrt': (np.sqrt, lambda lo: lo >= 0.0),
    'relu': (_relu, None),
}


def monotone_kernel(tag: str, lo, hi) -> Bounds:
    """[f(a̲), f(ā)] для монотонно возрастающей f; нарушение области - ошибка"""
    if tag not in MONOTONE_FUNCTIONS:
        raise IntervalError(f"Неизвестная монотонная функция: {tag}")
    fn, domain = MONOTONE_FUNCTIONS[tag]
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if domain is not None:
        ok = domain(lo)
        if not np.all(ok):
            bad = np.flatnonzero(~np.asarray(ok).reshape(-1))[0]
            raise IntervalDomainError(tag, float(lo.reshape(-1)[bad]), float(hi.reshape(-1)[bad]))
    return _finish(fn(lo), fn(hi))


def _contains_critical(lo, hi, phase: float) -> np.ndarray:
    """Есть ли точка phase + 2πk внутри [lo, hi]"""
    with np.errstate(invalid='ignore'):
        k = np.ceil((lo - phase) / TWO_PI)
        return phase + TWO_PI * k <= hi


def _periodic_kernel(fn: Callable, max_phase: float, min_phase: float, lo, hi) -> Bounds:
    # Приведение аргумента: ищем экстремумы периода внутри интервала,
    # иначе функция монотонна и достигает границ на концах
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    with np.errstate(invalid='ignore'):
        flo = fn(lo)
        fhi = fn(hi)
        wide = ~np.isfinite(lo) | ~np.isfinite(hi) | ((hi - lo) >= TWO_PI)
    has_max = _contains_critical(lo, hi, max_phase)
    has_min = _contains_critical(lo, hi, min_phase)
    out_lo = np.where(has_min | wide, -1.0, np.minimum(flo, fhi))
    out_hi = np.where(has_max | wide, 1.0, np.maximum(flo, fhi))
    point = lo == hi
    out_lo = np.where(point, flo, out_lo)
    out_hi = np.where(point, flo, out_hi)
    return _finish(out_lo, out_hi)


def sin_kernel(lo, hi) -> Bounds:
    return _periodic_kernel(np.sin, HALF_PI, -HALF_PI, lo, hi)


def cos_kernel(lo, hi) -> Bounds:
    # cos([a]) = sin([a] + π/2): те же экстремумы, сдвинутые на π/2
    return _periodic_kernel(np.cos, 0.0, PI, lo, hi)


def tan_kernel(lo, hi) -> Bounds:
    """[tan a̲, tan ā] если полюс π/2 + πk ∉ [a], иначе [-inf, inf]"""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    with np.errstate(invalid='ignore'):
        tlo = np.tan(lo)
        thi = np.tan(hi)
        k = np.ceil((lo - HALF_PI) / PI)
        pole = (HALF_PI + PI * k <= hi) | ~np.isfinite(lo) | ~np.isfinite(hi) | ((hi - lo) >= PI)
    point = lo == hi
    pole = pole & ~point
    out_lo = np.where(pole, -np.inf, tlo)
    out_hi = np.where(pole, np.inf, np.where(point, tlo, thi))
    return _finish(out_lo, out_hi)


def sin_incl_cases(lo, hi) -> Bounds:
    """
    Эталонный вариант sin: буквальная таблица из девяти случаев.

    Классы ширины: A1 = (w > 2π), A2 = (π < w <= 2π), A3 = (0 < w <= π), w = ā - a̲.
    Знаки косинусов на концах: (c̲, c̄) >= 0 - оба неотрицательны, <= 0 - оба неположительны,
    >=SE - (c̲ >= 0, c̄ <= 0), <=SE - (c̲ <= 0, c̄ >= 0).

    При одинаковых знаках косинусов интервал ширины из (π, 2π] проходит оба экстремума,
    а ширины не больше π - ни одного; этим строкам сопоставлены [-1, 1] и
    монотонный образ соответственно.
    Используется тестами как оракул для sin_kernel.
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    w = hi - lo
    s_lo, s_hi = np.sin(lo), np.sin(hi)
    c_lo, c_hi = np.cos(lo), np.cos(hi)
    a1 = w > TWO_PI
    a2 = (w > PI) & (w <= TWO_PI)
    a3 = (w > 0.0) & (w <= PI)
    same_pos = (c_lo >= 0) & (c_hi >= 0)
    same_neg = (c_lo <= 0) & (c_hi <= 0)
    south_east = (c_lo >= 0) & (c_hi <= 0)
    north_west = (c_lo <= 0) & (c_hi >= 0)
    s_min = np.minimum(s_lo, s_hi)
    s_max = np.maximum(s_lo, s_hi)
    one = np.ones_like(w)
    conditions = [
        w == 0.0,
        a1,
        a2 & same_pos, a2 & same_neg, a2 & south_east, a2 & north_west,
        a3 & same_pos, a3 & same_neg, a3 & south_east, a3 & north_west,
    ]
    lows = [s_lo, -one, -one, -one, s_min, -one, s_lo, s_hi, s_min, -one]
    highs = [s_lo, one, one, one, one, s_max, s_hi, s_lo, one, s_max]
    return np.select(conditions, lows, default=-1.0), np.select(conditions, highs, default=1.0)


UNARY_KERNELS: Dict[str, Callable[..., Bounds]] = {
    'neg': neg_kernel,
    'recip': recip_kernel,
    'sin': sin_kernel,
    'cos': cos_kernel,
    'tan': tan_kernel,
    **{tag: partial(monotone_kernel, tag) for tag in MONOTONE_FUNCTIONS},
}

BINARY_KERNELS: Dict[str, Callable[..., Bounds]] = {
    'add': add_kernel,
    'sub': sub_kernel,
    'mul': mul_kernel,
    'div': div_kernel,
}


def _point_recip(x):
    with np.errstate(divide='ignore'):
        return np.divide(1.0, x)


# Точечные аналоги ядер: те же функции numpy, что и на концах интервалов
POINT_UNARY: Dict[str, Callable] = {
    'neg': np.negative,
    'recip': _point_recip,
    'sin': np.sin,
    'cos': np.cos,
    'tan': np.tan,
    **{tag: fn for tag, (fn, _) in MONOTONE_FUNCTIONS.items()},
}

POINT_BINARY: Dict[str, Callable] = {
    'add': np.add,
    'sub': np.subtract,
    'mul': np.multiply,
    'div': lambda a, b: np.multiply(a, _point_recip(b)),
}


# ---------------------------------------------------------------------------
# Скалярный тип
# ---------------------------------------------------------------------------

class IntervalScalar:
    """Замкнутый интервал [lo, hi] с (возможно бесконечными) концами"""

    __slots__ = ('_lo', '_hi')

    def __init__(self, lo: Real, hi: Real = None):
        if hi is None:
            hi = lo
        lo = float(lo)
        hi = float(hi)
        if math.isnan(lo) or math.isnan(hi):
            raise InvalidIntervalError(f"Конец интервала NaN: [{lo}, {hi}]")
        if lo > hi:
            raise InvalidIntervalError(f"Нижний конец больше верхнего: [{lo}, {hi}]")
        self._lo = lo
        self._hi = hi

    @classmethod
    def point(cls, x: Real) -> "IntervalScalar":
        return cls(x, x)

    @classmethod
    def from_bounds(cls, bounds: Bounds) -> "IntervalScalar":
        lo, hi = bounds
        return cls(float(lo), float(hi))

    @property
    def lo(self) -> float:
        return self._lo

    @property
    def hi(self) -> float:
        return self._hi

    @property
    def is_degenerate(self) -> bool:
        return self._lo == self._hi

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self._lo) and math.isfinite(self._hi)

    def width(self) -> float:
        return width(self)

    def midpoint(self) -> float:
        return midpoint(self)

    def contains(self, x: Real) -> bool:
        return contains(self, x)

    def subset(self, other: "IntervalScalar") -> bool:
        return subset(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, IntervalScalar):
            return NotImplemented
        return self._lo == other._lo and self._hi == other._hi

    def __hash__(self) -> int:
        return hash((self._lo, self._hi))

    def __repr__(self) -> str:
        return f"IntervalScalar({self._lo!r}, {self._hi!r})"

    def __str__(self) -> str:
        return format_interval(self)

    def __add__(self, other):
        if isinstance(other, IntervalScalar):
            return add(self, other)
        return add_const(self, other)

    def __radd__(self, other):
        return add_const(self, other)

    def __sub__(self, other):
        if isinstance(other, IntervalScalar):
            return sub(self, other)
        return add_const(self, -other)

    def __rsub__(self, other):
        return add_const(neg(self), other)

    def __mul__(self, other):
        if isinstance(other, IntervalScalar):
            return mul(self, other)
        return scale(other, self)

    def __rmul__(self, other):
        return scale(other, self)

    def __truediv__(self, other):
        if isinstance(other, IntervalScalar):
            return div(self, other)
        return div_const(self, other)

    def __rtruediv__(self, other):
        return scale(other, recip(self))

    def __neg__(self):
        return neg(self)

    def __pow__(self, n: int):
        return pow_int(self, n)


def _wrap(bounds: Bounds) -> IntervalScalar:
    return IntervalScalar.from_bounds(bounds)


def add(a: IntervalScalar, b: IntervalScalar) -> IntervalScalar:
    return _wrap(add_kernel(a.lo, a.hi, b.lo, b.hi))


def sub(a: IntervalScalar, b: IntervalScalar) -> IntervalScalar:
    return _wrap(sub_kernel(a.lo, a.hi, b.lo, b.hi))


def neg(a: IntervalScalar) -> IntervalScalar:
    return _wrap(neg_kernel(a.lo, a.hi))


def scale(c: Real, a: IntervalScalar) -> IntervalScalar:
    return _wrap(scale_kernel(float(c), a.lo, a.hi))


def add_const(a: IntervalScalar, c: Real) -> IntervalScalar:
    return _wrap(add_const_kernel(a.lo, a.hi, float(c)))


def div_const(a: IntervalScalar, c: Real) -> IntervalScalar:
    return _wrap(div_const_kernel(a.lo, a.hi, float(c)))


def mul(a: IntervalScalar, b: IntervalScalar) -> IntervalScalar:
    return _wrap(mul_kernel(a.lo, a.hi, b.lo, b.hi))


def recip(a: IntervalScalar) -> IntervalScalar:
    return _wrap(recip_kernel(a.lo, a.hi))


def div(a: IntervalScalar, b: IntervalScalar) -> IntervalScalar:
    return _wrap(div_kernel(a.lo, a.hi, b.lo, b.hi))


def pow_int(a: IntervalScalar, n: int) -> IntervalScalar:
    return _wrap(pow_int_kernel(a.lo, a.hi, n))


def monotone_apply(f_tag: str, a: IntervalScalar) -> IntervalScalar:
    """
    Образ монотонно возрастающей функции: [f(a̲), f(ā)].

    Args:
        f_tag: 'exp', 'log', 'arctan', 'sqrt' (или 'relu')
        a: Входной интервал

    Returns:
        Интервал значений; IntervalDomainError при нарушении области (log: a̲ > 0, sqrt: a̲ >= 0)
    """
    return _wrap(monotone_kernel(f_tag, a.lo, a.hi))


def sin_incl(a: IntervalScalar) -> IntervalScalar:
    return _wrap(sin_kernel(a.lo, a.hi))


def cos_incl(a: IntervalScalar) -> IntervalScalar:
    return _wrap(cos_kernel(a.lo, a.hi))


def tan_incl(a: IntervalScalar) -> IntervalScalar:
    return _wrap(tan_kernel(a.lo, a.hi))


def contains(a: IntervalScalar, x: Real) -> bool:
    return a.lo <= x <= a.hi


def subset(a: IntervalScalar, b: IntervalScalar) -> bool:
    return b.lo <= a.lo and a.hi <= b.hi


def intersect(a: IntervalScalar, b: IntervalScalar):
    """Пересечение интервалов (None, если пусто)"""
    lo, hi, empty = intersect_kernel(a.lo, a.hi, b.lo, b.hi)
    if empty:
        return None
    return IntervalScalar(float(lo), float(hi))


def hull(a: IntervalScalar, b: IntervalScalar) -> IntervalScalar:
    return IntervalScalar(min(a.lo, b.lo), max(a.hi, b.hi))


def width(a: IntervalScalar) -> float:
    if not a.is_finite:
        raise UnboundedIntervalError(f"Ширина не определена для {format_interval(a)}")
    return a.hi - a.lo


def midpoint(a: IntervalScalar) -> float:
    if not a.is_finite:
        raise UnboundedIntervalError(f"Середина не определена для {format_interval(a)}")
    return 0.5 * (a.lo + a.hi)


# ---------------------------------------------------------------------------
# Текстовое представление "[lo, hi]"
# ---------------------------------------------------------------------------

_INTERVAL_RE = re.compile(r'^\s*\[\s*([^,\s\]]+)\s*,\s*([^,\s\]]+)\s*\]\s*$')


def format_endpoint(x: float) -> str:
    return format(float(x), '.17g')


def format_interval(a: IntervalScalar) -> str:
    return f"[{format_endpoint(a.lo)}, {format_endpoint(a.hi)}]"


def parse_endpoint(token: str) -> float:
    token = token.strip().replace('−', '-')
    try:
        value = float(token)
    except ValueError:
        raise ExpressionSyntaxError(f"Некорректный конец интервала: '{token}'")
    if math.isnan(value):
        raise ExpressionSyntaxError("NaN не допускается как конец интервала")
    return value


def parse_interval(text: str) -> IntervalScalar:
    """
    Разбирает строку вида "[lo, hi]" (допускаются токены inf / -inf).

    Args:
        text: Строка интервала

    Returns:
        IntervalScalar
    """
    match = _INTERVAL_RE.match(text.replace('−', '-'))
    if not match:
        raise ExpressionSyntaxError(f"Ожидался интервал вида [lo, hi], получено: '{text}'")
    return IntervalScalar(parse_endpoint(match.group(1)), parse_endpoint(match.group(2)))
