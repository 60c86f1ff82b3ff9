from pydantic import BaseModel
from typing import Optional, List, Dict, Any, Union
from pydantic import validator, Field

Endpoint = Union[float, str]


def _check_pairs(v, field_name: str):
    """Проверка списка пар [lo, hi]"""
    for i, pair in enumerate(v):
        if len(pair) != 2:
            raise ValueError(f'{field_name}[{i}]: ожидалась пара [lo, hi]')
        lo, hi = (float(x) for x in pair)
        if lo != lo or hi != hi:
            raise ValueError(f'{field_name}[{i}]: NaN не допускается')
        if lo > hi:
            raise ValueError(f'{field_name}[{i}]: нижний конец больше верхнего')
    return v


# Network file schemas
class NetworkLayerFile(BaseModel):
    """Слой сети в файле весов"""
    W: List[List[float]] = Field(..., description="Матрица весов m_i × m_{i-1}, по строкам")
    b: List[float] = Field(..., description="Смещения, длина m_i")
    act: str = Field("relu", description="relu | id")

    @validator('act')
    def validate_act(cls, v):
        """Валидация функции активации"""
        if v not in ('relu', 'id'):
            raise ValueError('act должен быть "relu" или "id"')
        return v


class NetworkFile(BaseModel):
    """Файл весов сети прямого распространения"""
    layers: List[NetworkLayerFile]

    @validator('layers')
    def validate_layers(cls, v):
        if not v:
            raise ValueError('Сеть должна содержать хотя бы один слой')
        return v

    class Config:
        json_schema_extra = {
            "example": {
                "layers": [
                    {"W": [[1.0, 0.0], [0.0, 1.0]], "b": [0.0, 0.0], "act": "relu"},
                    {"W": [[1.0, -1.0]], "b": [0.5], "act": "id"}
                ]
            }
        }


# Scenario schemas
class ScenarioConfig(BaseModel):
    """Сценарий анализа достижимости (файл configs/*.json)"""
    system: str = Field("vehicle", description="Идентификатор системы")
    initial_box: List[List[Endpoint]] = Field(..., description="Начальный бокс: список пар [lo, hi]")
    t0: float = 0.0
    t_end: float = 1.25
    h: float = Field(0.05, description="Шаг Эйлера")
    control_period: float = Field(0.25, description="Период удержания управления (ZOH)")
    disturbance: Optional[List[List[Endpoint]]] = Field(None, description="Бокс возмущения [w]")
    network: Optional[str] = Field(None, description="Путь к файлу весов; без него генерируется сеть по seed")
    network_dims: List[int] = Field([4, 100, 100, 2], description="Размерности генерируемой сети")
    network_seed: int = 0
    bound_method: str = Field("crown_localized", description="crown_localized | ibp_global")
    interconnection: str = Field("held", description="held | hybrid")
    seed: int = 0
    partition: Optional[List[int]] = Field(None, description="Число делений начального бокса по осям")
    mc_trajectories: int = Field(100, ge=0)
    runtime_repeats: int = Field(0, ge=0, description="Повторы для статистики времени (0 = не измерять)")
    vehicle_lf: Optional[float] = Field(None, gt=0)
    vehicle_lr: Optional[float] = Field(None, gt=0)
    output_dir: str = "results"
    tube_path: Optional[str] = "tube.jsonl"
    tube_csv_path: Optional[str] = "tube.csv"
    mc_report_path: Optional[str] = "mc_report.json"
    plot_data_path: Optional[str] = "plot_data.json"
    stats_path: Optional[str] = "runtime_stats.json"

    @validator('initial_box')
    def validate_initial_box(cls, v):
        if not v:
            raise ValueError('Начальный бокс не может быть пустым')
        return _check_pairs(v, 'initial_box')

    @validator('disturbance')
    def validate_disturbance(cls, v):
        if v is not None:
            return _check_pairs(v, 'disturbance')
        return v

    @validator('h', 'control_period')
    def validate_positive(cls, v):
        if not v > 0:
            raise ValueError('Шаг и период управления должны быть положительными')
        return v

    @validator('t_end')
    def validate_horizon(cls, v, values):
        if 't0' in values and not v > values['t0']:
            raise ValueError('t_end должен быть больше t0')
        return v

    @validator('bound_method')
    def validate_bound_method(cls, v):
        if v not in ('crown_localized', 'ibp_global'):
            raise ValueError('bound_method должен быть crown_localized или ibp_global')
        return v

    @validator('interconnection')
    def validate_interconnection(cls, v):
        if v not in ('held', 'hybrid'):
            raise ValueError('interconnection должен быть held или hybrid')
        return v

    @validator('partition')
    def validate_partition(cls, v):
        if v is not None and any(k < 1 for k in v):
            raise ValueError('Число делений по каждой оси должно быть >= 1')
        return v

    class Config:
        json_schema_extra = {
            "example": {
                "system": "vehicle",
                "initial_box": [[7.95, 8.05], [7.95, 8.05], [-2.0994, -2.0894], [1.995, 2.005]],
                "t0": 0.0,
                "t_end": 1.25,
                "h": 0.05,
                "control_period": 0.25,
                "bound_method": "crown_localized",
                "interconnection": "held",
                "seed": 0
            }
        }


# API schemas
class IntervalEvalRequest(BaseModel):
    """Естественное включение выражения на боксе"""
    expression: str = Field(..., description="Выражение, выходы через ';'")
    box: List[List[Endpoint]] = Field(..., description="Список пар [lo, hi] по входам")
    input_names: Optional[List[str]] = Field(None, description="Порядок входов (по умолчанию - порядок появления)")

    @validator('box')
    def validate_box(cls, v):
        return _check_pairs(v, 'box')

    class Config:
        json_schema_extra = {
            "example": {
                "expression": "(x + 1)^2",
                "box": [[-1, 1]]
            }
        }


class IntervalEvalResponse(BaseModel):
    input_names: List[str]
    intervals: List[str] = Field(..., description="Выходы в текстовом виде [lo, hi]")
    lower: List[Endpoint]
    upper: List[Endpoint]
    monotone: bool


class PartitionRequest(IntervalEvalRequest):
    """Включение с равномерным разбиением входного бокса"""
    k: List[int] = Field(..., description="Число делений по каждой оси")
    samples: int = Field(0, ge=0, le=100000, description="Точки оракула выборки (0 = без оракула)")
    seed: int = 0

    @validator('k')
    def validate_k(cls, v):
        if any(c < 1 for c in v):
            raise ValueError('Число делений по каждой оси должно быть >= 1')
        return v


class PartitionResponse(BaseModel):
    cells: int
    single: List[str]
    hull: List[str]
    oracle: Optional[List[str]] = None


class NetworkBoundsRequest(BaseModel):
    """Оценки выхода сети на боксе"""
    network: NetworkFile
    box: List[List[Endpoint]]
    method: str = Field("crown", description="ibp | crown")

    @validator('box')
    def validate_box(cls, v):
        return _check_pairs(v, 'box')

    @validator('method')
    def validate_method(cls, v):
        if v not in ('ibp', 'crown'):
            raise ValueError('method должен быть ibp или crown')
        return v


class NetworkBoundsResponse(BaseModel):
    method: str
    intervals: List[str]
    lower: List[Endpoint]
    upper: List[Endpoint]
    affine: Optional[Dict[str, Any]] = Field(None, description="C_lower, d_lower, C_upper, d_upper для crown")


class ReachRequest(BaseModel):
    scenario: ScenarioConfig
    mc_trajectories: Optional[int] = Field(None, ge=0, le=1000)


class ReachResponse(BaseModel):
    times: List[float]
    lower: List[List[float]]
    upper: List[List[float]]
    violations: int
    metadata: Dict[str, Any]
