"""
Анализ достижимости через системы вложения (embedding systems).

Для ẋ = f(x, u, w) система вложения - 2n-мерная ОДУ на (x̲, x̄):
    ẋ̲ᵢ = f̲ᵢ([x̲, x̄_{i:x̲}], [u], [w]),   ẋ̄ᵢ = f̄ᵢ([x̲_{i:x̄}, x̄], [u], [w]),
где [f] - естественная функция включения f. Интегрирование - явный метод Эйлера;
траектория вложения даёт трубку [x̲(t), x̄(t)], содержащую все истинные траектории.

Замкнутый контур u = N(x) с удержанием управления (ZOH) на control_period:
- held: на каждом моменте управления [u] = [N]([x]) на всём боксе, удерживается период;
- hybrid: [N] вычисляется на каждой грани на каждом шаге Эйлера, CROWN-оценки
  обновляются в моменты управления.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.config import config
from app.core.exceptions import (
    EmbeddingInstabilityError,
    LocalizationError,
    NonFiniteRateError,
    NonFiniteStageError,
    ScenarioConfigError,
    ShapeMismatchError,
)
from app.services import interval_core as ic
from app.services.inclusion_engine import ComposedFunction
from app.services.interval_tensor import Box, split_uniform, stack_faces
from app.services.neural_verify import (
    AffineBoundPair,
    FeedForwardNetwork,
    crown_bounds,
    forward,
    ibp_batch,
    ibp_bounds,
    localized_bounds,
    localized_incl,
)

logger = logging.getLogger(__name__)

BOUND_METHODS = ('crown_localized', 'ibp_global')
INTERCONNECTIONS = ('held', 'hybrid')

BoxSchedule = Union[None, Box, Callable[[float], Box]]

_EMPTY = Box(np.empty(0), np.empty(0))


@dataclass(frozen=True)
class OpenLoopSystem:
    """ẋ = f(x, u, w); f принимает вход (x, u, w) длины n + p + q и возвращает n скоростей"""
    n: int
    p: int
    q: int
    f: ComposedFunction
    name: str = ''

    def __post_init__(self):
        if self.f.n_inputs != self.n + self.p + self.q:
            raise ShapeMismatchError(
                f"f принимает {self.f.n_inputs} входов, ожидалось n + p + q = {self.n + self.p + self.q}"
            )
        if self.f.n_outputs != self.n:
            raise ShapeMismatchError(f"f возвращает {self.f.n_outputs} значений, ожидалось n = {self.n}")

    def rates(self, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Точечные скорости для пачки состояний (N, n)"""
        size = x.shape[0]
        u = np.broadcast_to(u, (size, self.p))
        w = np.broadcast_to(w, (size, self.q))
        return self.f.evaluate_points(np.concatenate([x, u, w], axis=1))


@dataclass(frozen=True)
class ClosedLoopSetup:
    """Замкнутый контур u = N(x(t_k)) с периодом удержания control_period"""
    system: OpenLoopSystem
    controller: FeedForwardNetwork
    control_period: float
    disturbance: BoxSchedule = None
    nn_bound_method: str = 'crown_localized'
    interconnection: str = 'held'

    def __post_init__(self):
        if self.controller.input_dim != self.system.n:
            raise ShapeMismatchError(f"Вход контроллера {self.controller.input_dim} != n = {self.system.n}")
        if self.controller.output_dim != self.system.p:
            raise ShapeMismatchError(f"Выход контроллера {self.controller.output_dim} != p = {self.system.p}")
        if not self.control_period > 0:
            raise ScenarioConfigError("control_period должен быть > 0")
        if self.nn_bound_method not in BOUND_METHODS:
            raise ScenarioConfigError(f"Неизвестный метод оценки сети: {self.nn_bound_method}")
        if self.interconnection not in INTERCONNECTIONS:
            raise ScenarioConfigError(f"Неизвестный режим связи: {self.interconnection}")


@dataclass
class ReachTube:
    """Трубка достижимости: боксы [lower[k], upper[k]] в моменты times[k]"""
    times: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def dim(self) -> int:
        return self.lower.shape[1]

    @property
    def boxes(self) -> List[Box]:
        return [Box(lo, hi) for lo, hi in zip(self.lower, self.upper)]

    def box(self, k: int) -> Box:
        return Box(self.lower[k], self.upper[k])

    def projection(self, i: int, j: int) -> Dict[str, List[List[float]]]:
        """Проекция боксов на координаты (i, j): точный выбор столбцов"""
        return {
            'lower': self.lower[:, [i, j]].tolist(),
            'upper': self.upper[:, [i, j]].tolist(),
        }

    def contains(self, states: np.ndarray) -> np.ndarray:
        """states формы (K, N, n) -> булев массив (K, N)"""
        lo = self.lower[:, None, :]
        hi = self.upper[:, None, :]
        return ((lo <= states) & (states <= hi)).all(axis=-1)

    def to_records(self) -> List[Dict[str, Any]]:
        return [
            {'t': float(t), 'lower': lo.tolist(), 'upper': hi.tolist()}
            for t, lo, hi in zip(self.times, self.lower, self.upper)
        ]


@dataclass
class McReport:
    """Результат проверки включения траекторий Монте-Карло"""
    n_traj: int
    seed: int
    times: List[float]
    violations_per_step: List[int]
    max_excess: List[float]
    min_margin: Optional[List[float]]
    states: Optional[np.ndarray] = None

    @property
    def total_violations(self) -> int:
        return int(sum(self.violations_per_step))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n_traj': self.n_traj,
            'seed': self.seed,
            'times': self.times,
            'violations_per_step': self.violations_per_step,
            'total_violations': self.total_violations,
            'max_excess': self.max_excess,
            'min_margin': self.min_margin,
        }


# ---------------------------------------------------------------------------
# Функции вложения
# ---------------------------------------------------------------------------

def _schedule_at(schedule: BoxSchedule, t: float, dim: int, what: str) -> Box:
    if dim == 0:
        return _EMPTY
    if schedule is None:
        raise ScenarioConfigError(f"Не задан бокс {what}")
    box = schedule(t) if callable(schedule) else schedule
    if box.dim != dim:
        raise ShapeMismatchError(f"Бокс {what} размерности {box.dim}, ожидалась {dim}")
    return box


def _face_rates(sys: OpenLoopSystem, faces_lo: np.ndarray, faces_hi: np.ndarray,
                u_lo: np.ndarray, u_hi: np.ndarray, w: Box,
                t: Optional[float]) -> Tuple[np.ndarray, np.ndarray]:
    n = sys.n
    size = faces_lo.shape[0]
    lo = np.concatenate([faces_lo, np.broadcast_to(u_lo, (size, sys.p)),
                         np.broadcast_to(w.lower, (size, sys.q))], axis=1)
    hi = np.concatenate([faces_hi, np.broadcast_to(u_hi, (size, sys.p)),
                         np.broadcast_to(w.upper, (size, sys.q))], axis=1)
    try:
        out_lo, out_hi = sys.f.evaluate_bounds(lo, hi, require_finite=True)
    except NonFiniteStageError as e:
        raise NonFiniteRateError(f"бесконечная граница на шаге {e.stage_index} ({e.stage_name})", t) from e
    idx = np.arange(n)
    lower_rate = out_lo[idx, idx]
    upper_rate = out_hi[n + idx, idx]
    bad = ~(np.isfinite(lower_rate) & np.isfinite(upper_rate))
    if bad.any():
        coord = int(np.flatnonzero(bad)[0])
        raise NonFiniteRateError(f"бесконечная скорость по координате {coord}", t, coord)
    return lower_rate, upper_rate


def open_embedding_rhs(sys: OpenLoopSystem, x: Box, u: Box, w: Box,
                       t: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Правая часть открытой системы вложения.

    Для каждого i: нижняя скорость - i-й нижний конец [f] на грани [x̲, x̄_{i:x̲}],
    верхняя - i-й верхний конец [f] на грани [x̲_{i:x̄}, x̄]. Все 2n граней
    вычисляются одной пачкой.

    Returns:
        (lower_rate, upper_rate); NonFiniteRateError при бесконечной границе
    """
    if x.dim != sys.n or u.dim != sys.p or w.dim != sys.q:
        raise ShapeMismatchError(
            f"Размерности (x, u, w) = ({x.dim}, {u.dim}, {w.dim}), ожидалось ({sys.n}, {sys.p}, {sys.q})"
        )
    faces = stack_faces(x)
    return _face_rates(sys, faces.lo, faces.hi, u.lower, u.upper, w, t)


def closed_embedding_rhs(setup: ClosedLoopSetup, x: Box, w: Box, bounds: Optional[AffineBoundPair],
                         t: Optional[float] = None,
                         events: Optional[List[Dict[str, Any]]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Гибридная замкнутая функция вложения.

    На каждой грани управление оценивается localized_incl(bounds, грань); если бокс вышел
    из bounds.region (или bounds is None), используется IBP на гранях, а событие
    добавляется в events.
    """
    sys = setup.system
    if x.dim != sys.n or w.dim != sys.q:
        raise ShapeMismatchError(f"Размерности (x, w) = ({x.dim}, {w.dim}), ожидалось ({sys.n}, {sys.q})")
    faces = stack_faces(x)
    if bounds is not None and setup.nn_bound_method == 'crown_localized':
        try:
            u_lo, u_hi = localized_bounds(bounds, faces.lo, faces.hi)
        except LocalizationError:
            logger.warning(f"⚠️ t={t}: бокс вышел из области локализации CROWN, переход на IBP")
            if events is not None:
                events.append({'t': None if t is None else float(t), 'reason': 'localization'})
            u_lo, u_hi = ibp_batch(setup.controller, faces.lo, faces.hi)
    else:
        u_lo, u_hi = ibp_batch(setup.controller, faces.lo, faces.hi)
    return _face_rates(sys, faces.lo, faces.hi, u_lo, u_hi, w, t)


def held_control(setup: ClosedLoopSetup, x: Box) -> Box:
    """
    Интервал управления на всём боксе для режима held.

    crown_localized: пересечение localized_incl(crown_bounds(x), x) и ibp_bounds(x);
    координаты с пустым (из-за округления) пересечением берутся из IBP.
    """
    ibp = ibp_bounds(setup.controller, x)
    if setup.nn_bound_method == 'ibp_global':
        return ibp
    crown = localized_incl(crown_bounds(setup.controller, x), x)
    lo, hi, empty = ic.intersect_kernel(crown.lower, crown.upper, ibp.lower, ibp.upper)
    return Box(np.where(empty, ibp.lower, lo), np.where(empty, ibp.upper, hi))


# ---------------------------------------------------------------------------
# Интегрирование
# ---------------------------------------------------------------------------

def time_grid(t0: float, t_end: float, h: float) -> np.ndarray:
    """Сетка t0 + k·h, k = 0..K; (t_end - t0)/h должно быть целым"""
    if not h > 0:
        raise ScenarioConfigError("Шаг h должен быть > 0")
    if not t_end > t0:
        raise ScenarioConfigError("t_end должен быть больше t0")
    span = t_end - t0
    n_steps = int(round(span / h))
    if n_steps < 1 or abs(n_steps * h - span) > 1e-9 * max(1.0, abs(span)):
        raise ScenarioConfigError(f"Горизонт {span} не кратен шагу {h}")
    return t0 + h * np.arange(n_steps + 1, dtype=np.float64)


def steps_per_period(control_period: float, h: float) -> int:
    m = int(round(control_period / h))
    if m < 1 or abs(m * h - control_period) > 1e-9 * max(1.0, control_period):
        raise ScenarioConfigError(f"Период управления {control_period} не кратен шагу {h}")
    return m


def euler_reach(target: Union[ClosedLoopSetup, OpenLoopSystem], x0: Box, t0: float, t_end: float, h: float,
                u_schedule: BoxSchedule = None, w_schedule: BoxSchedule = None,
                seed: Optional[int] = None) -> ReachTube:
    """
    Явный метод Эйлера для системы вложения.

    Args:
        target: ClosedLoopSetup (замкнутый контур) или OpenLoopSystem (тогда нужен u_schedule)
        x0: Начальный бокс
        t0, t_end, h: Горизонт и шаг
        u_schedule: Бокс управления или функция t -> Box (открытый контур)
        w_schedule: Бокс возмущения или функция t -> Box (для замкнутого контура по умолчанию
            берётся setup.disturbance)
        seed: Записывается в метаданные

    Returns:
        ReachTube на сетке t0 + k·h
    """
    closed = isinstance(target, ClosedLoopSetup)
    sys = target.system if closed else target
    if x0.dim != sys.n:
        raise ShapeMismatchError(f"Начальный бокс размерности {x0.dim}, ожидалась {sys.n}")
    if not x0.is_finite():
        raise ScenarioConfigError("Начальный бокс должен быть конечным")
    if closed and w_schedule is None:
        w_schedule = target.disturbance

    times = time_grid(t0, t_end, h)
    n_steps = len(times) - 1
    period = steps_per_period(target.control_period, h) if closed else None
    lower = np.empty((n_steps + 1, sys.n))
    upper = np.empty((n_steps + 1, sys.n))
    lower[0] = x0.lower
    upper[0] = x0.upper

    events: List[Dict[str, Any]] = []
    control_instants: List[float] = []
    refreshes = 0
    u_box: Optional[Box] = None
    bounds: Optional[AffineBoundPair] = None
    hold_fallback = False
    started = time.perf_counter()
    mode = f"closed/{target.interconnection}/{target.nn_bound_method}" if closed else "open"
    logger.info(f"Старт трубки ({mode}): t ∈ [{t0}, {t_end}], h={h}, шагов {n_steps}")

    for k in range(n_steps):
        t = float(times[k])
        box = Box(lower[k], upper[k])
        w = _schedule_at(w_schedule, t, sys.q, 'возмущения')

        if closed:
            if k % period == 0:
                control_instants.append(t)
                hold_fallback = False
                if target.interconnection == 'held':
                    u_box = held_control(target, box)
                elif target.nn_bound_method == 'crown_localized':
                    bounds = crown_bounds(target.controller, box)
                refreshes += 1
                logger.debug(f"t={t:.6g}: обновление оценок контроллера")
            if target.interconnection == 'held':
                lo_rate, hi_rate = open_embedding_rhs(sys, box, u_box, w, t)
            else:
                step_events: List[Dict[str, Any]] = []
                active = None if hold_fallback else bounds
                lo_rate, hi_rate = closed_embedding_rhs(target, box, w, active, t, step_events)
                if step_events:
                    hold_fallback = True
                    events.extend(step_events)
        else:
            u = _schedule_at(u_schedule, t, sys.p, 'управления')
            lo_rate, hi_rate = open_embedding_rhs(sys, box, u, w, t)

        lower[k + 1] = lower[k] + h * lo_rate
        upper[k + 1] = upper[k] + h * hi_rate
        if (lower[k + 1] > upper[k + 1]).any():
            t_next = float(times[k + 1])
            logger.error(f"❌ t={t_next:.6g}: нижняя граница превысила верхнюю")
            raise EmbeddingInstabilityError("нижняя граница превысила верхнюю после шага Эйлера", t_next)

    elapsed = time.perf_counter() - started
    logger.info(f"✅ Трубка построена за {elapsed:.3f} с, переходов на IBP: {len(events)}")
    metadata = {
        'mode': mode,
        't0': float(t0),
        't_end': float(t_end),
        'h': float(h),
        'n_steps': n_steps,
        'control_instants': control_instants,
        'bound_refreshes': refreshes,
        'fallback_events': events,
        'seed': config.get('seed') if seed is None else seed,
        'wall_clock_s': elapsed,
    }
    return ReachTube(times=times, lower=lower, upper=upper, metadata=metadata)


def open_reach_with_global_u(sys: OpenLoopSystem, x0: Box, u_schedule: BoxSchedule, t0: float, t_end: float,
                             h: float, w_schedule: BoxSchedule = None) -> ReachTube:
    """Трубка открытой системы при интервальном управлении [u](t)"""
    return euler_reach(sys, x0, t0, t_end, h, u_schedule=u_schedule, w_schedule=w_schedule)


def partitioned_reach(target: Union[ClosedLoopSetup, OpenLoopSystem], x0: Box, k: Sequence[int],
                      t0: float, t_end: float, h: float, max_workers: Optional[int] = None,
                      **kwargs) -> Tuple[ReachTube, List[ReachTube]]:
    """
    Трубки для ячеек равномерного разбиения x0 и их оболочка по каждому моменту времени.

    Ячейки считаются в пуле потоков; агрегация - в порядке индексов ячеек.
    """
    cells = split_uniform(x0, k)
    max_workers = max_workers or config.get('max_workers')
    logger.info(f"Разбиение начального бокса на {len(cells)} ячеек, потоков: {max_workers}")

    def run(cell: Box) -> ReachTube:
        return euler_reach(target, cell, t0, t_end, h, **kwargs)

    if max_workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            tubes = list(pool.map(run, cells))
    else:
        tubes = [run(cell) for cell in cells]

    lower = np.min(np.stack([tb.lower for tb in tubes]), axis=0)
    upper = np.max(np.stack([tb.upper for tb in tubes]), axis=0)
    metadata = dict(tubes[0].metadata)
    metadata.update({
        'partition': [int(c) for c in k],
        'cells': len(cells),
        'fallback_events': [e for tb in tubes for e in tb.metadata['fallback_events']],
        'wall_clock_s': sum(tb.metadata['wall_clock_s'] for tb in tubes),
    })
    return ReachTube(times=tubes[0].times, lower=lower, upper=upper, metadata=metadata), tubes


# ---------------------------------------------------------------------------
# Монте-Карло
# ---------------------------------------------------------------------------

def _uniform(rng: np.random.Generator, box: Box, size: int) -> np.ndarray:
    if box.dim == 0:
        return np.empty((size, 0))
    draws = box.lower + (box.upper - box.lower) * rng.random((size, box.dim))
    return np.minimum(draws, box.upper)


def _simulate(sys: OpenLoopSystem, x0: Box, times: np.ndarray, h: float, n_traj: int, seed: int,
              control: Callable[[int, float, np.ndarray, np.random.Generator], np.ndarray],
              w_schedule: BoxSchedule) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    states = np.empty((len(times), n_traj, sys.n))
    X = _uniform(rng, x0, n_traj)
    states[0] = X
    for k in range(len(times) - 1):
        t = float(times[k])
        U = control(k, t, X, rng)
        W = _uniform(rng, _schedule_at(w_schedule, t, sys.q, 'возмущения'), n_traj)
        X = X + h * sys.rates(X, U, W)
        states[k + 1] = X
    return states


def _check_tube_grid(tube: ReachTube) -> np.ndarray:
    meta = tube.metadata
    times = time_grid(meta['t0'], meta['t_end'], meta['h'])
    if len(times) != len(tube.times) or not np.allclose(times, tube.times):
        raise ScenarioConfigError("Сетка трубки не совпадает с сеткой моделирования")
    return tube.times


def _report(tube: ReachTube, states: np.ndarray, n_traj: int, seed: int) -> McReport:
    times = [float(t) for t in tube.times]
    if n_traj == 0:
        return McReport(n_traj=0, seed=seed, times=times, violations_per_step=[0] * len(times),
                        max_excess=[0.0] * tube.dim, min_margin=None, states=states)
    inside = tube.contains(states)
    below = tube.lower[:, None, :] - states
    above = states - tube.upper[:, None, :]
    excess = np.maximum(np.maximum(below, above), 0.0).max(axis=(0, 1))
    margin = np.minimum(-below, -above).min(axis=(0, 1))
    violations = (~inside).sum(axis=1)
    report = McReport(
        n_traj=n_traj, seed=seed, times=times,
        violations_per_step=[int(v) for v in violations],
        max_excess=excess.tolist(), min_margin=margin.tolist(), states=states,
    )
    if report.total_violations:
        logger.warning(f"⚠️ Нарушений включения: {report.total_violations}")
    else:
        logger.info(f"✅ Все {n_traj} траекторий внутри трубки")
    return report


def mc_check(setup: ClosedLoopSetup, x0: Box, n_traj: int, seed: int, tube: ReachTube) -> McReport:
    """
    Проверка включения истинных траекторий замкнутого контура.

    Траектории - точечный Эйлер на той же сетке с тем же шагом h; управление N(x(t_k)) в моменты
    управления удерживается период; возмущение равномерно в [w](t), перевыбирается каждый шаг.
    """
    times = _check_tube_grid(tube)
    period = steps_per_period(setup.control_period, tube.metadata['h'])
    held: Dict[str, np.ndarray] = {}

    def control(k, t, X, rng):
        if k % period == 0:
            held['u'] = forward(setup.controller, X) if X.shape[0] else np.empty((0, setup.system.p))
        return held['u']

    states = _simulate(setup.system, x0, times, tube.metadata['h'], n_traj, seed, control, setup.disturbance)
    return _report(tube, states, n_traj, seed)


def mc_check_open(sys: OpenLoopSystem, x0: Box, u_schedule: BoxSchedule, n_traj: int, seed: int,
                  tube: ReachTube, w_schedule: BoxSchedule = None) -> McReport:
    """Проверка включения для открытой системы; u(t) равномерно в [u](t), кусочно-постоянно по шагам"""
    times = _check_tube_grid(tube)

    def control(k, t, X, rng):
        return _uniform(rng, _schedule_at(u_schedule, t, sys.p, 'управления'), X.shape[0])

    states = _simulate(sys, x0, times, tube.metadata['h'], n_traj, seed, control, w_schedule)
    return _report(tube, states, n_traj, seed)
