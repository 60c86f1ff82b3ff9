"""
Запись результатов: трубки (JSONL, CSV), отчёты и данные для графиков (JSON).

Все файлы детерминированы: float записываются кратчайшим точным представлением,
время выполнения пишется только в отдельный файл статистики.
"""
import csv
import json
import logging
from pathlib import Path
from typing import Any, Union

import numpy as np

from app.services.interval_core import IntervalScalar, format_interval
from app.services.interval_tensor import IntervalTensor
from app.services.reach_engine import ReachTube

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def to_jsonable(value: Any) -> Any:
    """numpy, боксы и бесконечности -> типы JSON"""
    if isinstance(value, IntervalTensor):
        return value.to_dict()
    if isinstance(value, IntervalScalar):
        return format_interval(value)
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if value == np.inf:
            return 'inf'
        if value == -np.inf:
            return '-inf'
        return value
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    return value


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_json(data: Any, path: PathLike) -> Path:
    path = _prepare(path)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(to_jsonable(data), f, ensure_ascii=False, indent=2)
    logger.info(f"Записан файл {path}")
    return path


def write_tube_jsonl(tube: ReachTube, path: PathLike) -> Path:
    """Одна запись {t, lower, upper} на момент сетки"""
    path = _prepare(path)
    with open(path, 'w', encoding='utf-8') as f:
        for record in tube.to_records():
            f.write(json.dumps(to_jsonable(record)) + '\n')
    logger.info(f"Трубка записана: {path}")
    return path


def write_tube_csv(tube: ReachTube, path: PathLike) -> Path:
    """Столбцы t, lo_1..lo_n, hi_1..hi_n"""
    path = _prepare(path)
    n = tube.dim
    header = ['t'] + [f'lo_{i + 1}' for i in range(n)] + [f'hi_{i + 1}' for i in range(n)]
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for t, lo, hi in zip(tube.times, tube.lower, tube.upper):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in lo] + [repr(float(v)) for v in hi])
    logger.info(f"Трубка (CSV) записана: {path}")
    return path


def read_tube_jsonl(path: PathLike) -> ReachTube:
    times, lower, upper = [], [], []
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if not line.strip():
                continue
            record = json.loads(line)
            times.append(float(record['t']))
            lower.append([float(v) for v in record['lower']])
            upper.append([float(v) for v in record['upper']])
    return ReachTube(times=np.array(times), lower=np.array(lower), upper=np.array(upper))
