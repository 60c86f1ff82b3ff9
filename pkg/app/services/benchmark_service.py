"""
Бенчмарки: демонстрация двух разложений одной функции и замкнутый контур модели автомобиля.
"""
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from app.core.config import config
from app.core.exceptions import ScenarioConfigError
from app.models.schemas.schemas import ScenarioConfig
from app.services.expression_service import parse_recipe
from app.services.inclusion_engine import ComposedFunction, RecipeBuilder, compare_decompositions
from app.services.interval_tensor import Box
from app.services.neural_verify import FeedForwardNetwork, generate_random_network, load_network
from app.services.reach_engine import (
    ClosedLoopSetup,
    McReport,
    OpenLoopSystem,
    ReachTube,
    euler_reach,
    mc_check,
    partitioned_reach,
)
from app.services import export_service

logger = logging.getLogger(__name__)

# Два разложения одной функции на [-1, 1]²
DEMO_DECOMPOSITIONS = {
    'A': "(x1 + x2)**2; 4*sin((x1 - x2)/4)",
    'B': "x1**2 + 2*x1*x2 + x2**2; 4*sin(x1/4)*cos(x2/4) - 4*cos(x1/4)*sin(x2/4)",
}
DEMO_BOX = [[-1.0, 1.0], [-1.0, 1.0]]

VEHICLE_STATE = ('px', 'py', 'phi', 'v')
VEHICLE_INPUT = ('u1', 'u2')

HEADING0 = -2.0 * math.pi / 3.0
DEFAULT_VEHICLE_BOX = [
    [7.95, 8.05],
    [7.95, 8.05],
    [HEADING0 - 0.005, HEADING0 + 0.005],
    [1.995, 2.005],
]


def vehicle_recipe(lf: float = None, lr: float = None) -> ComposedFunction:
    """
    Кинематическая модель автомобиля (велосипедная).

    β = arctan(lf/(lf + lr) · tan u2)
    ṗx = v cos(φ + β), ṗy = v sin(φ + β), φ̇ = v/lr · sin β, v̇ = u1

    Args:
        lf, lr: Расстояния от центра масс до осей (м), по умолчанию из конфигурации
    """
    lf = config.get('vehicle_lf') if lf is None else lf
    lr = config.get('vehicle_lr') if lr is None else lr
    if not (lf > 0 and lr > 0):
        raise ScenarioConfigError(f"Длины lf, lr должны быть положительными: {lf}, {lr}")
    builder = RecipeBuilder(VEHICLE_STATE + VEHICLE_INPUT)
    px, py, phi, v, u1, u2 = builder.inputs
    beta = (lf / (lf + lr) * u2.tan()).arctan()
    heading = phi + beta
    return builder.build(
        [v * heading.cos(), v * heading.sin(), v / lr * beta.sin(), u1],
        name=f"vehicle(lf={lf}, lr={lr})",
    )


def vehicle_system(lf: float = None, lr: float = None) -> OpenLoopSystem:
    return OpenLoopSystem(n=4, p=2, q=0, f=vehicle_recipe(lf, lr), name='vehicle')


def default_vehicle_scenario(**overrides) -> ScenarioConfig:
    """Сценарий автомобиля по умолчанию: t ∈ [0, 1.25], h = 0.05, управление каждые 0.25 с"""
    values = {
        'system': 'vehicle',
        'initial_box': DEFAULT_VEHICLE_BOX,
        't0': 0.0,
        't_end': 1.25,
        'h': 0.05,
        'control_period': 0.25,
        'mc_trajectories': config.get('mc_trajectories'),
        'seed': config.get('seed'),
    }
    values.update(overrides)
    return ScenarioConfig(**values)


def runtime_stats(fn, repeats: int) -> Dict[str, float]:
    """Среднее и стандартное отклонение времени выполнения fn() по repeats запускам"""
    durations = []
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        durations.append(time.perf_counter() - started)
    arr = np.array(durations)
    return {
        'repeats': int(repeats),
        'mean_s': float(arr.mean()) if repeats else 0.0,
        'std_s': float(arr.std()) if repeats else 0.0,
    }


@dataclass
class BenchmarkResult:
    tube: ReachTube
    report: McReport
    plot_data: Dict[str, Any]
    stats: Optional[Dict[str, float]] = None
    min_speed: Optional[float] = None
    files: List[Path] = field(default_factory=list)


def build_setup(scenario: ScenarioConfig, net: Optional[FeedForwardNetwork] = None) -> ClosedLoopSetup:
    if scenario.system != 'vehicle':
        raise ScenarioConfigError(f"Неизвестная система: {scenario.system}")
    if scenario.disturbance:
        raise ScenarioConfigError("Модель автомобиля не имеет входа возмущения")
    if net is None:
        if scenario.network:
            net = load_network(scenario.network)
        else:
            net = generate_random_network(scenario.network_dims, scenario.network_seed)
            logger.info(f"Используется сгенерированная сеть {net.dims} (seed={scenario.network_seed})")
    return ClosedLoopSetup(
        system=vehicle_system(scenario.vehicle_lf, scenario.vehicle_lr),
        controller=net,
        control_period=scenario.control_period,
        nn_bound_method=scenario.bound_method,
        interconnection=scenario.interconnection,
    )


def compute_tube(setup: ClosedLoopSetup, scenario: ScenarioConfig, x0: Box) -> ReachTube:
    if scenario.partition:
        tube, _ = partitioned_reach(setup, x0, scenario.partition, scenario.t0, scenario.t_end, scenario.h,
                                    seed=scenario.seed)
        return tube
    return euler_reach(setup, x0, scenario.t0, scenario.t_end, scenario.h, seed=scenario.seed)


def run_vehicle_benchmark(scenario: Optional[ScenarioConfig] = None, net: Optional[FeedForwardNetwork] = None,
                          mc_trajectories: Optional[int] = None) -> BenchmarkResult:
    """
    Трубка замкнутого контура, проверка Монте-Карло и данные для графика (px, py).

    Args:
        scenario: Сценарий (по умолчанию - default_vehicle_scenario())
        net: Контроллер (по умолчанию - из файла сценария или сгенерированный)
        mc_trajectories: Переопределение числа траекторий

    Returns:
        BenchmarkResult
    """
    scenario = scenario or default_vehicle_scenario()
    setup = build_setup(scenario, net)
    x0 = Box.from_pairs(scenario.initial_box)
    n_traj = scenario.mc_trajectories if mc_trajectories is None else mc_trajectories

    tube = compute_tube(setup, scenario, x0)
    report = mc_check(setup, x0, n_traj, scenario.seed, tube)

    min_speed = None
    if n_traj:
        min_speed = float(report.states[:, :, 3].min())
        if min_speed < 0:
            logger.warning(f"⚠️ Скорость стала отрицательной на траекториях Монте-Карло: {min_speed:.6g}")

    plot_data = {
        'times': tube.times,
        'tube_xy': tube.projection(0, 1),
        'trajectories_xy': report.states[:, :, :2] if n_traj else [],
        'initial_box': x0.to_pairs(),
        'violations': report.total_violations,
    }

    stats = None
    if scenario.runtime_repeats:
        stats = runtime_stats(lambda: compute_tube(setup, scenario, x0), scenario.runtime_repeats)
        logger.info(f"Время построения трубки: {stats['mean_s']:.4f} ± {stats['std_s']:.4f} с "
                    f"({stats['repeats']} запусков)")
    return BenchmarkResult(tube=tube, report=report, plot_data=plot_data, stats=stats, min_speed=min_speed)


def write_benchmark_outputs(result: BenchmarkResult, scenario: ScenarioConfig,
                            output_dir: Optional[str] = None) -> List[Path]:
    """Пишет файлы, указанные в сценарии (пути относительно output_dir)"""
    base = Path(output_dir or scenario.output_dir)
    files = []
    if scenario.tube_path:
        files.append(export_service.write_tube_jsonl(result.tube, base / scenario.tube_path))
    if scenario.tube_csv_path:
        files.append(export_service.write_tube_csv(result.tube, base / scenario.tube_csv_path))
    if scenario.mc_report_path:
        report = result.report.to_dict()
        report['min_speed'] = result.min_speed
        files.append(export_service.write_json(report, base / scenario.mc_report_path))
    if scenario.plot_data_path:
        files.append(export_service.write_json(result.plot_data, base / scenario.plot_data_path))
    if scenario.stats_path and result.stats is not None:
        files.append(export_service.write_json(result.stats, base / scenario.stats_path))
    result.files = files
    return files


def run_decomposition_demo(k: Sequence[int] = (32, 32), n_samples: Optional[int] = None,
                  seed: Optional[int] = None) -> Dict[str, Any]:
    """
    Два разложения одной функции на [-1, 1]²: одиночный бокс, оболочка разбиения
    на k ячеек и образы равномерной выборки.

    Returns:
        Данные для графика и флаги включения ('all_contained')
    """
    n_samples = config.get('oracle_samples') if n_samples is None else n_samples
    seed = config.get('seed') if seed is None else seed
    box = Box.from_pairs(DEMO_BOX)
    recipes = {name: parse_recipe(text, ['x1', 'x2'], name=name) for name, text in DEMO_DECOMPOSITIONS.items()}
    comparison = compare_decompositions(recipes, box, k, n_samples, seed)

    decompositions = {}
    all_contained = True
    for name, result in comparison['decompositions'].items():
        flags = {
            'samples_in_single': result['samples_in_single'],
            'samples_in_partition_hull': result['samples_in_partition_hull'],
            'samples_in_cell_union': result['samples_in_cell_union'],
            'partition_in_single': result['partition_in_single'],
        }
        all_contained = all_contained and all(flags.values())
        decompositions[name] = {
            'expression': DEMO_DECOMPOSITIONS[name],
            'single': result['single'].to_pairs(),
            'partition_hull': result['partition_hull'].to_pairs(),
            'cells': [cell.to_pairs() for cell in result['cells']],
            **flags,
        }
        logger.info(f"Разложение {name}: одиночный бокс {result['single'].to_pairs()}, "
                    f"оболочка разбиения {result['partition_hull'].to_pairs()}")

    if not all_contained:
        logger.error("❌ Не все точки выборки попали в вычисленные оценки")
    return {
        'box': DEMO_BOX,
        'partition': [int(c) for c in k],
        'samples': n_samples,
        'seed': seed,
        'oracle': comparison['oracle'].to_pairs(),
        'sample_images': comparison['images'],
        'decompositions': decompositions,
        'all_contained': all_contained,
    }


def load_scenario(path: str) -> ScenarioConfig:
    """
    Читает и проверяет файл сценария (JSON).

    Raises:
        ScenarioConfigError: файл не найден, не JSON или не проходит проверку
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise ScenarioConfigError(f"Файл сценария не найден: {path}")
    except json.JSONDecodeError as e:
        raise ScenarioConfigError(f"Файл сценария {path} не является JSON: {e}")
    try:
        scenario = ScenarioConfig(**payload)
    except (ValidationError, TypeError) as e:
        raise ScenarioConfigError(f"Некорректный сценарий {path}: {e}")
    logger.info(f"Загружен сценарий {path}: система {scenario.system}, h={scenario.h}")
    return scenario
