"""
Командная строка ival.

    ival eval "(x + 1)^2" --box=-1,1
    ival demo decompositions [--k 32,32] [--samples 2000] [--out results/decompositions.json]
    ival reach --config configs/vehicle_closed_loop.json [--partition 2,2,1,1] [--repeats [N]]
    ival mc --config configs/vehicle_closed_loop.json --samples 100
    ival bounds --net net.json --box="l1,u1;l2,u2" --method ibp|crown
    ival gen-net --dims 4,100,100,2 --seed 0 --out net.json
    ival serve [--host 0.0.0.0] [--port 8000]

Коды выхода: 0 - успех, 1 - прерывание верификации или нарушение включения,
2 - ошибка конфигурации или аргументов. Логи пишутся в stderr, результаты - в stdout и файлы.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from app.core.config import config, configure_logging
from app.core.exceptions import (
    ExpressionSyntaxError,
    IntervalError,
    NetworkFormatError,
    ReachAbortError,
    ScenarioConfigError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFICATION = 1
EXIT_CONFIG = 2


def _int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Ожидался список целых через запятую: '{text}'")
    if not values:
        raise argparse.ArgumentTypeError("Пустой список")
    return values


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: ошибка: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='ival', description="Интервальные функции включения и анализ достижимости")
    parser.add_argument('--log-level', default=None, help="Уровень логирования (по умолчанию IVAL_LOG_LEVEL)")
    parser.add_argument('--inflate-ulps', type=int, default=None, help="Раздувание концов интервалов на k ulp")
    sub = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    p = sub.add_parser('eval', help="Естественное включение выражения на боксе")
    p.add_argument('expression')
    p.add_argument('--box', required=True, help='"l1,u1;l2,u2;..."')
    p.add_argument('--names', default=None, help="Порядок входов через запятую")

    p = sub.add_parser('demo', help="Демонстрации")
    p.add_argument('name', choices=['decompositions'])
    p.add_argument('--k', type=_int_list, default=[32, 32], help="Деления по осям, например 32,32")
    p.add_argument('--samples', type=int, default=None)
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--out', default='results/decompositions.json')

    for name, help_text in (('reach', "Трубка достижимости по сценарию"),
                            ('mc', "Трубка и проверка Монте-Карло по сценарию")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument('--config', required=True)
        p.add_argument('--partition', type=_int_list, default=None)
        p.add_argument('--net', default=None, help="Файл весов контроллера")
        p.add_argument('--output-dir', default=None)
        if name == 'mc':
            p.add_argument('--samples', type=int, required=True, help="Число траекторий")
        else:
            p.add_argument('--repeats', type=int, nargs='?', default=None, const=config.get('runtime_repeats'),
                           help="Повторы для статистики времени; без значения - IVAL_RUNTIME_REPEATS")

    p = sub.add_parser('bounds', help="Оценки выхода сети на боксе")
    p.add_argument('--net', required=True)
    p.add_argument('--box', required=True)
    p.add_argument('--method', choices=['ibp', 'crown'], default='crown')

    p = sub.add_parser('gen-net', help="Сгенерировать случайную relu-сеть")
    p.add_argument('--dims', type=_int_list, required=True)
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--scale', type=float, default=None, help="Масштаб выходного слоя")
    p.add_argument('--out', required=True)

    p = sub.add_parser('serve', help="Запустить HTTP API")
    p.add_argument('--host', default='0.0.0.0')
    p.add_argument('--port', type=int, default=8000)
    return parser


def cmd_eval(args) -> int:
    from app.services.expression_service import parse_recipe
    from app.services.inclusion_engine import natural_evaluate
    from app.services.interval_core import IntervalScalar, format_interval
    from app.services.interval_tensor import Box

    names = [n.strip() for n in args.names.split(',')] if args.names else None
    recipe = parse_recipe(args.expression, names)
    box = Box.from_string(args.box)
    if box.dim != recipe.n_inputs:
        raise ScenarioConfigError(
            f"Бокс размерности {box.dim}, а выражение имеет входы {list(recipe.input_names)}"
        )
    result = natural_evaluate(recipe, box)
    for lo, hi in zip(result.lower, result.upper):
        print(format_interval(IntervalScalar(lo, hi)))
    return EXIT_OK


def cmd_demo(args) -> int:
    from app.services import export_service
    from app.services.benchmark_service import run_decomposition_demo

    data = run_decomposition_demo(args.k, args.samples, args.seed)
    export_service.write_json(data, args.out)
    for name, result in data['decompositions'].items():
        print(f"{name}: single={result['single']} partition_hull={result['partition_hull']}")
    return EXIT_OK if data['all_contained'] else EXIT_VERIFICATION


def _scenario_from_args(args):
    from app.services.benchmark_service import load_scenario

    scenario = load_scenario(args.config)
    updates = {}
    if args.partition:
        updates['partition'] = args.partition
    if args.net:
        updates['network'] = args.net
    if getattr(args, 'repeats', None) is not None:
        updates['runtime_repeats'] = args.repeats
    if getattr(args, 'samples', None) is not None:
        updates['mc_trajectories'] = args.samples
    if args.command == 'mc':
        updates['runtime_repeats'] = 0
    return scenario.model_copy(update=updates)


def cmd_reach(args) -> int:
    from app.services.benchmark_service import run_vehicle_benchmark, write_benchmark_outputs

    scenario = _scenario_from_args(args)
    result = run_vehicle_benchmark(scenario)
    write_benchmark_outputs(result, scenario, args.output_dir)
    violations = result.report.total_violations
    print(f"steps={result.tube.n_steps} trajectories={result.report.n_traj} violations={violations}")
    if violations:
        logger.error(f"❌ Нарушений включения: {violations}")
        return EXIT_VERIFICATION
    return EXIT_OK


def cmd_bounds(args) -> int:
    from app.services.interval_core import IntervalScalar, format_interval
    from app.services.interval_tensor import Box
    from app.services.neural_verify import crown_bounds, ibp_bounds, load_network, localized_incl

    net = load_network(args.net)
    box = Box.from_string(args.box)
    if args.method == 'crown':
        result = localized_incl(crown_bounds(net, box), box)
    else:
        result = ibp_bounds(net, box)
    for lo, hi in zip(result.lower, result.upper):
        print(format_interval(IntervalScalar(lo, hi)))
    return EXIT_OK


def cmd_gen_net(args) -> int:
    from app.services.neural_verify import generate_random_network, save_network

    seed = config.get('seed') if args.seed is None else args.seed
    net = generate_random_network(args.dims, seed, args.scale)
    save_network(net, args.out)
    print(Path(args.out))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port)
    return EXIT_OK


COMMANDS = {
    'eval': cmd_eval,
    'demo': cmd_demo,
    'reach': cmd_reach,
    'mc': cmd_reach,
    'bounds': cmd_bounds,
    'gen-net': cmd_gen_net,
    'serve': cmd_serve,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    configure_logging(args.log_level)
    try:
        if args.inflate_ulps is not None:
            from app.services.interval_core import set_inflation
            set_inflation(args.inflate_ulps)
        return COMMANDS[args.command](args)
    except ReachAbortError as e:
        logger.error(f"❌ Верификация прервана: {e}")
        return EXIT_VERIFICATION
    except (ScenarioConfigError, NetworkFormatError, ExpressionSyntaxError) as e:
        logger.error(f"❌ Ошибка конфигурации: {e}")
        return EXIT_CONFIG
    except IntervalError as e:
        logger.error(f"❌ Ошибка вычислений: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
