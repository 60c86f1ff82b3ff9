"""
Конфигурация интервальных вычислений и анализа достижимости.
Значения по умолчанию можно переопределить через переменные окружения (IVAL_<ИМЯ>)
или через файл .env.
"""
import os
import sys
import logging
from typing import Any, Dict
from dotenv import load_dotenv

load_dotenv()

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class IntervalConfig:
    """Конфигурация библиотеки и бенчмарков"""

    ENV_PREFIX = "IVAL_"

    DEFAULTS: Dict[str, Any] = {
        # Раздувание концов интервалов на k ulp (0 = выключено)
        'inflate_ulps': 0,
        # Число точек для оракула выборки
        'oracle_samples': 2000,
        # Монте-Карло траектории для проверки включения
        'mc_trajectories': 100,
        'seed': 0,
        # Потоки для разбиений и независимых трубок
        'max_workers': 1,
        # Колёсная база модели автомобиля (м)
        'vehicle_lf': 1.0,
        'vehicle_lr': 1.0,
        # Повторы для статистики времени выполнения
        'runtime_repeats': 100,
        # Масштаб выходного слоя сгенерированного контроллера
        'controller_output_scale': 0.05,
        'log_level': 'INFO',
    }

    @classmethod
    def get_settings(cls) -> Dict[str, Any]:
        """
        Получает все настройки.
        Приоритет: переменные окружения > значения по умолчанию

        Переменные окружения:
        - IVAL_INFLATE_ULPS
        - IVAL_ORACLE_SAMPLES
        - IVAL_MC_TRAJECTORIES
        - IVAL_SEED
        - IVAL_MAX_WORKERS
        - IVAL_VEHICLE_LF, IVAL_VEHICLE_LR
        - IVAL_RUNTIME_REPEATS
        - IVAL_CONTROLLER_OUTPUT_SCALE
        - IVAL_LOG_LEVEL
        """
        settings = cls.DEFAULTS.copy()

        for name, default in cls.DEFAULTS.items():
            env_key = f"{cls.ENV_PREFIX}{name.upper()}"
            env_value = os.getenv(env_key)
            if env_value is None or env_value == "":
                continue
            try:
                settings[name] = type(default)(env_value)
            except ValueError:
                logger.warning(
                    f"⚠️ Неверное значение для {env_key}: {env_value}. Используется значение по умолчанию."
                )

        return settings

    @classmethod
    def get(cls, name: str) -> Any:
        """
        Получает одну настройку.

        Args:
            name: Имя настройки ('seed', 'inflate_ulps', ...)

        Returns:
            Значение настройки (KeyError для неизвестного имени)
        """
        settings = cls.get_settings()
        if name not in settings:
            raise KeyError(f"Неизвестная настройка: {name}")
        return settings[name]


def configure_logging(level: str = None) -> None:
    """Настройка логирования (вывод в stderr, чтобы stdout оставался для данных)"""
    level = (level or IntervalConfig.get('log_level')).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format=LOG_FORMAT,
        stream=sys.stderr,
    )


# Глобальный экземпляр конфигурации
config = IntervalConfig()
