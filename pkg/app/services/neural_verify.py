"""
Верификация нейросетевых контроллеров прямого распространения.

- forward: точное значение сети (пачкой)
- ibp_bounds: естественная функция включения сети (интервальное распространение)
- crown_bounds: обратный проход CROWN, аффинные оценки C̲x + d̲ <= N(x) <= C̄x + d̄ на боксе
- localized_incl: монотонная локализованная функция включения из аффинных оценок
- load_network / save_network / generate_random_network: файл весов
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from app.core.config import config
from app.core.exceptions import LocalizationError, NetworkFormatError, ShapeMismatchError
from app.models.schemas.schemas import NetworkFile, NetworkLayerFile
from app.services import interval_core as ic
from app.services.interval_tensor import Box, matmul_bounds

logger = logging.getLogger(__name__)

ACTIVATIONS = ('relu', 'identity')
_FILE_ACT = {'relu': 'relu', 'identity': 'id'}
_ACT_FROM_FILE = {'relu': 'relu', 'id': 'identity'}


@dataclass(frozen=True)
class Layer:
    """Слой ξ' = σ(W ξ + b)"""
    W: np.ndarray
    b: np.ndarray
    activation: str = 'relu'

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


class FeedForwardNetwork:
    """Полносвязная сеть; последний слой - тождественная активация"""

    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise NetworkFormatError("Сеть должна содержать хотя бы один слой")
        checked = []
        for idx, layer in enumerate(layers):
            W = np.array(layer.W, dtype=np.float64)
            b = np.array(layer.b, dtype=np.float64)
            if W.ndim != 2:
                raise NetworkFormatError(f"W должна быть матрицей, получена форма {W.shape}", idx)
            if b.shape != (W.shape[0],):
                raise NetworkFormatError(f"длина b {b.shape} не равна числу строк W {W.shape[0]}", idx)
            if layer.activation not in ACTIVATIONS:
                raise NetworkFormatError(f"неизвестная активация '{layer.activation}'", idx)
            if not (np.isfinite(W).all() and np.isfinite(b).all()):
                raise NetworkFormatError("веса должны быть конечными", idx)
            if checked and checked[-1].out_dim != W.shape[1]:
                raise NetworkFormatError(
                    f"вход {W.shape[1]} не совпадает с выходом предыдущего слоя {checked[-1].out_dim}", idx
                )
            W.setflags(write=False)
            b.setflags(write=False)
            checked.append(Layer(W, b, layer.activation))
        if checked[-1].activation != 'identity':
            raise NetworkFormatError("последний слой должен иметь тождественную активацию", len(checked) - 1)
        self.layers: Tuple[Layer, ...] = tuple(checked)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> List[int]:
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    @property
    def is_linear(self) -> bool:
        return all(layer.activation == 'identity' for layer in self.layers)

    def __repr__(self) -> str:
        return f"FeedForwardNetwork(dims={self.dims})"


@dataclass(frozen=True)
class AffineBoundPair:
    """C̲x + d̲ <= N(x) <= C̄x + d̄ для всех x из region"""
    C_lower: np.ndarray
    d_lower: np.ndarray
    C_upper: np.ndarray
    d_upper: np.ndarray
    region: Box

    def evaluate_affine(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Значения нижней и верхней аффинных форм в точках x формы (n,) или (N, n)"""
        x = np.asarray(x, dtype=np.float64)
        return x @ self.C_lower.T + self.d_lower, x @ self.C_upper.T + self.d_upper

    def to_dict(self) -> dict:
        return {
            'C_lower': self.C_lower.tolist(),
            'd_lower': self.d_lower.tolist(),
            'C_upper': self.C_upper.tolist(),
            'd_upper': self.d_upper.tolist(),
            'region': self.region.to_pairs(),
        }


# ---------------------------------------------------------------------------
# Точное значение и IBP
# ---------------------------------------------------------------------------

def _affine_points(layer: Layer, X: np.ndarray) -> np.ndarray:
    # Тот же порядок суммирования (по возрастанию k), что и в matmul_bounds,
    # чтобы forward совпадал с ibp на вырожденных боксах побитово
    W = layer.W
    XT = X.T
    acc = np.multiply(W[:, 0:1], XT[0:1, :])
    for k in range(1, W.shape[1]):
        acc = np.add(acc, np.multiply(W[:, k:k + 1], XT[k:k + 1, :]))
    return np.add(acc.T, layer.b)


def _activate_points(layer: Layer, Z: np.ndarray) -> np.ndarray:
    if layer.activation == 'relu':
        return np.maximum(Z, 0.0)
    return Z


def forward(net: FeedForwardNetwork, x) -> np.ndarray:
    """
    Выход сети N(x).

    Args:
        net: Сеть
        x: Вход (n,) или пачка (N, n)
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise ShapeMismatchError(f"Вход формы {x.shape} для сети с входом {net.input_dim}")
    for layer in net.layers:
        X = _activate_points(layer, _affine_points(layer, X))
    return X[0] if single else X


def _affine_bounds(layer: Layer, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    zlo, zhi = matmul_bounds(layer.W, layer.W, lo.T, hi.T)
    return ic.add_kernel(zlo.T, zhi.T, layer.b, layer.b)


def _activate_bounds(layer: Layer, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if layer.activation == 'relu':
        return ic.monotone_kernel('relu', lo, hi)
    return lo, hi


def ibp_batch(net: FeedForwardNetwork, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """IBP над пачкой боксов (N, n) -> (N, p)"""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if lo.ndim != 2 or lo.shape[1] != net.input_dim:
        raise ShapeMismatchError(f"Боксы формы {lo.shape} для сети с входом {net.input_dim}")
    for layer in net.layers:
        lo, hi = _activate_bounds(layer, *_affine_bounds(layer, lo, hi))
    return lo, hi


def ibp_preactivations(net: FeedForwardNetwork, x: Box) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Боксы пре-активаций z^(i) = W ξ + b для каждого слоя"""
    if x.dim != net.input_dim:
        raise ShapeMismatchError(f"Бокс размерности {x.dim} для сети с входом {net.input_dim}")
    lo, hi = x.lower[None, :], x.upper[None, :]
    pre = []
    for layer in net.layers:
        zlo, zhi = _affine_bounds(layer, lo, hi)
        pre.append((zlo[0], zhi[0]))
        lo, hi = _activate_bounds(layer, zlo, zhi)
    return pre


def ibp_bounds(net: FeedForwardNetwork, x: Box) -> Box:
    """Естественная функция включения сети на боксе x"""
    if x.dim != net.input_dim:
        raise ShapeMismatchError(f"Бокс размерности {x.dim} для сети с входом {net.input_dim}")
    lo, hi = ibp_batch(net, x.lower[None, :], x.upper[None, :])
    return Box(lo[0], hi[0])


# ---------------------------------------------------------------------------
# CROWN
# ---------------------------------------------------------------------------

def relu_relaxation(l: np.ndarray, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Линейная релаксация relu на [l, u].

    Верхняя граница - хорда u(z - l)/(u - l); нижняя - z или 0 без свободного члена
    (наклон 1, если u > |l|). Стабильные нейроны точны.

    Returns:
        (наклон нижней, наклон верхней, свободный член верхней)
    """
    active = l >= 0.0
    inactive = u <= 0.0
    unstable = ~active & ~inactive
    denom = np.where(unstable, u - l, 1.0)
    upper_slope = np.where(active, 1.0, np.where(unstable, u / denom, 0.0))
    upper_bias = np.where(unstable, -upper_slope * l, 0.0)
    lower_slope = np.where(active, 1.0, np.where(unstable & (u > np.abs(l)), 1.0, 0.0))
    return lower_slope, upper_slope, upper_bias


def crown_bounds(net: FeedForwardNetwork, y: Box) -> AffineBoundPair:
    """
    Обратный проход CROWN на боксе y.

    Пре-активации считаются IBP; оценки переносятся от выхода ко входу с разделением
    коэффициентов на положительную и отрицательную части.

    Args:
        net: Сеть
        y: Конечный бокс (область локализации)

    Returns:
        AffineBoundPair с region = y
    """
    if y.dim != net.input_dim:
        raise ShapeMismatchError(f"Бокс размерности {y.dim} для сети с входом {net.input_dim}")
    if not y.is_finite():
        raise ShapeMismatchError("crown_bounds требует конечный бокс")
    pre = ibp_preactivations(net, y)

    last = net.layers[-1]
    A_up = np.array(last.W)
    A_lo = np.array(last.W)
    d_up = np.array(last.b)
    d_lo = np.array(last.b)

    for idx in range(len(net.layers) - 2, -1, -1):
        layer = net.layers[idx]
        if layer.activation == 'relu':
            l, u = pre[idx]
            a_lo, a_up, b_up = relu_relaxation(l, u)
            pos, neg = np.maximum(A_up, 0.0), np.minimum(A_up, 0.0)
            d_up = d_up + pos @ b_up
            A_up = pos * a_up + neg * a_lo
            pos, neg = np.maximum(A_lo, 0.0), np.minimum(A_lo, 0.0)
            d_lo = d_lo + neg @ b_up
            A_lo = pos * a_lo + neg * a_up
        d_up = d_up + A_up @ layer.b
        d_lo = d_lo + A_lo @ layer.b
        A_up = A_up @ layer.W
        A_lo = A_lo @ layer.W

    return AffineBoundPair(C_lower=A_lo, d_lower=d_lo, C_upper=A_up, d_upper=d_up, region=y)


def localized_bounds(bounds: AffineBoundPair, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    N̲ = C̲⁺x̲ + C̲⁻x̄ + d̲, N̄ = C̄⁺x̄ + C̄⁻x̲ + d̄ над пачкой боксов (N, n).

    Все боксы должны лежать в bounds.region, иначе LocalizationError.
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    region = bounds.region
    if not ((region.lower <= lo).all() and (hi <= region.upper).all()):
        raise LocalizationError("Бокс не лежит в области локализации аффинных оценок")
    Cl_pos, Cl_neg = np.maximum(bounds.C_lower, 0.0), np.minimum(bounds.C_lower, 0.0)
    Cu_pos, Cu_neg = np.maximum(bounds.C_upper, 0.0), np.minimum(bounds.C_upper, 0.0)
    out_lo = lo @ Cl_pos.T + hi @ Cl_neg.T + bounds.d_lower
    out_hi = hi @ Cu_pos.T + lo @ Cu_neg.T + bounds.d_upper
    return out_lo, np.maximum(out_hi, out_lo)


def localized_incl(bounds: AffineBoundPair, x: Box) -> Box:
    """Локализованная монотонная функция включения [N]_{[y]}(x) для x ⊆ region"""
    lo, hi = localized_bounds(bounds, x.lower[None, :], x.upper[None, :])
    return Box(lo[0], hi[0])


# ---------------------------------------------------------------------------
# Файл весов
# ---------------------------------------------------------------------------

def network_to_file(net: FeedForwardNetwork) -> NetworkFile:
    return NetworkFile(layers=[
        NetworkLayerFile(W=layer.W.tolist(), b=layer.b.tolist(), act=_FILE_ACT[layer.activation])
        for layer in net.layers
    ])


def network_from_file(payload: Union[NetworkFile, dict]) -> FeedForwardNetwork:
    if not isinstance(payload, NetworkFile):
        try:
            payload = NetworkFile(**payload)
        except (ValidationError, TypeError) as e:
            raise NetworkFormatError(f"Некорректный файл весов: {e}")
    layers = []
    for idx, layer in enumerate(payload.layers):
        try:
            W = np.array(layer.W, dtype=np.float64) if layer.W else np.zeros((0, 0))
        except ValueError:
            raise NetworkFormatError("строки W имеют разную длину", idx)
        if W.ndim != 2:
            raise NetworkFormatError("W должна быть матрицей", idx)
        layers.append(Layer(W, np.array(layer.b, dtype=np.float64), _ACT_FROM_FILE[layer.act]))
    return FeedForwardNetwork(layers)


def save_network(net: FeedForwardNetwork, path: Union[str, Path]) -> None:
    """Сохраняет сеть в JSON; float записываются кратчайшим точным представлением"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(network_to_file(net).model_dump(), f)
    logger.info(f"✅ Сеть {net.dims} сохранена: {path}")


def load_network(path: Union[str, Path]) -> FeedForwardNetwork:
    """
    Загружает сеть из JSON {"layers": [{"W", "b", "act"}, ...]}.

    Raises:
        NetworkFormatError: повреждённый файл или нарушена цепочка размерностей
    """
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise NetworkFormatError(f"Файл весов не найден: {path}")
    except json.JSONDecodeError as e:
        raise NetworkFormatError(f"Файл весов {path} не является JSON: {e}")
    if not isinstance(payload, dict):
        raise NetworkFormatError("Файл весов должен быть объектом с ключом 'layers'")
    net = network_from_file(payload)
    logger.info(f"Загружена сеть {net.dims} из {path}")
    return net


def generate_random_network(dims: Sequence[int], seed: int = 0,
                            output_scale: Optional[float] = None) -> FeedForwardNetwork:
    """
    Детерминированная случайная relu-сеть (PCG64), инициализация He.

    Args:
        dims: Размерности [n, m_1, ..., p]
        seed: Зерно генератора
        output_scale: Множитель весов и смещений выходного слоя
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise NetworkFormatError(f"Некорректные размерности сети: {dims}")
    output_scale = config.get('controller_output_scale') if output_scale is None else output_scale
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    for idx, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        b = rng.normal(0.0, 0.1, size=fan_out)
        last = idx == len(dims) - 2
        if last:
            W = W * output_scale
            b = b * output_scale
        layers.append(Layer(W, b, 'identity' if last else 'relu'))
    return FeedForwardNetwork(layers)
