"""
Текстовый формат композиций для CLI, API и файлов сценариев.

Выражения: операторы + - * /, степень ** (или ^) с целым показателем, функции
sin cos tan exp log arctan sqrt pow(x, n), константы pi и e, именованные входы.
Несколько выходов разделяются ';'. Пример: "(x1 + x2)**2; 4*sin((x1 - x2)/4)".

Выражение разбирается модулем ast с белым списком узлов и переводится в ленту
шагов через RecipeBuilder в том порядке, в котором его записал пользователь
(разложение не упрощается).
"""
import ast
import math
import logging
from typing import List, Optional, Sequence, Union

from app.core.exceptions import ExpressionSyntaxError, IntervalError
from app.services.inclusion_engine import ComposedFunction, RecipeBuilder, Var

logger = logging.getLogger(__name__)

FUNCTIONS = {
    'sin': 'sin',
    'cos': 'cos',
    'tan': 'tan',
    'exp': 'exp',
    'log': 'log',
    'ln': 'log',
    'arctan': 'arctan',
    'atan': 'arctan',
    'sqrt': 'sqrt',
}

CONSTANTS = {
    'pi': math.pi,
    'e': math.e,
}

_FOLD = {
    'sin': math.sin,
    'cos': math.cos,
    'tan': math.tan,
    'exp': math.exp,
    'log': math.log,
    'arctan': math.atan,
    'sqrt': math.sqrt,
}

Node = Union[Var, float]


def _split_outputs(text: str) -> List[str]:
    parts = [p.strip() for p in text.replace('^', '**').split(';')]
    parts = [p for p in parts if p]
    if not parts:
        raise ExpressionSyntaxError("Пустое выражение")
    return parts


def _parse(part: str) -> ast.AST:
    try:
        return ast.parse(part, mode='eval').body
    except SyntaxError as e:
        raise ExpressionSyntaxError(f"Синтаксическая ошибка в '{part}': {e.msg}")


def collect_input_names(text: str) -> List[str]:
    """Имена входов в порядке первого появления (без функций и констант)"""
    names: List[str] = []
    for part in _split_outputs(text):
        tree = _parse(part)
        callees = {id(node.func) for node in ast.walk(tree) if isinstance(node, ast.Call)}
        found = [
            node for node in ast.walk(tree)
            if isinstance(node, ast.Name) and id(node) not in callees and node.id not in CONSTANTS
        ]
        for node in sorted(found, key=lambda n: n.col_offset):
            if node.id not in names:
                names.append(node.id)
    return names


class _Translator:
    def __init__(self, builder: RecipeBuilder):
        self.builder = builder
        self.names = {name: var for name, var in zip(builder.input_names, builder.inputs)}

    def visit(self, node: ast.AST) -> Node:
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ExpressionSyntaxError(f"Недопустимая константа: {node.value!r}")
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in self.names:
                return self.names[node.id]
            if node.id in CONSTANTS:
                return CONSTANTS[node.id]
            raise ExpressionSyntaxError(f"Неизвестное имя: {node.id}")
        if isinstance(node, ast.UnaryOp):
            operand = self.visit(node.operand)
            if isinstance(node.op, ast.USub):
                return -operand
            if isinstance(node.op, ast.UAdd):
                return operand
            raise ExpressionSyntaxError(f"Недопустимый унарный оператор: {type(node.op).__name__}")
        if isinstance(node, ast.BinOp):
            return self.visit_binop(node)
        if isinstance(node, ast.Call):
            return self.visit_call(node)
        raise ExpressionSyntaxError(f"Недопустимая конструкция: {type(node).__name__}")

    def visit_binop(self, node: ast.BinOp) -> Node:
        left = self.visit(node.left)
        right = self.visit(node.right)
        if isinstance(node.op, ast.Pow):
            return self.power(left, right)
        ops = {ast.Add: lambda a, b: a + b, ast.Sub: lambda a, b: a - b,
               ast.Mult: lambda a, b: a * b, ast.Div: lambda a, b: a / b}
        fn = ops.get(type(node.op))
        if fn is None:
            raise ExpressionSyntaxError(f"Недопустимый оператор: {type(node.op).__name__}")
        try:
            return fn(left, right)
        except ZeroDivisionError:
            raise ExpressionSyntaxError("Деление на ноль в константном выражении")
        except IntervalError as e:
            raise ExpressionSyntaxError(str(e))

    def power(self, base: Node, exponent: Node) -> Node:
        if isinstance(exponent, Var):
            raise ExpressionSyntaxError("Показатель степени должен быть константой")
        if not isinstance(base, Var):
            try:
                value = base ** exponent
            except (OverflowError, ZeroDivisionError) as e:
                raise ExpressionSyntaxError(f"{base} ** {exponent}: {e}")
            if isinstance(value, complex):
                raise ExpressionSyntaxError(f"{base} ** {exponent}: комплексный результат")
            return value
        if exponent != int(exponent) or exponent < 1:
            raise ExpressionSyntaxError(f"Показатель степени должен быть целым >= 1, получено {exponent}")
        return base ** int(exponent)

    def visit_call(self, node: ast.Call) -> Node:
        if not isinstance(node.func, ast.Name):
            raise ExpressionSyntaxError("Допускаются только вызовы функций по имени")
        fname = node.func.id
        if node.keywords:
            raise ExpressionSyntaxError(f"{fname}: именованные аргументы не поддерживаются")
        args = [self.visit(a) for a in node.args]
        if fname == 'pow':
            if len(args) != 2:
                raise ExpressionSyntaxError("pow ожидает два аргумента")
            return self.power(args[0], args[1])
        if fname not in FUNCTIONS:
            raise ExpressionSyntaxError(f"Неизвестная функция: {fname}")
        if len(args) != 1:
            raise ExpressionSyntaxError(f"{fname} ожидает один аргумент")
        op = FUNCTIONS[fname]
        arg = args[0]
        if isinstance(arg, Var):
            return arg.apply(op)
        try:
            return _FOLD[op](arg)
        except (ValueError, OverflowError) as e:
            raise ExpressionSyntaxError(f"{fname}({arg}): {e}")


def parse_recipe(text: str, input_names: Optional[Sequence[str]] = None, name: str = '') -> ComposedFunction:
    """
    Строит композицию из текстового выражения.

    Args:
        text: Выражение (выходы через ';')
        input_names: Порядок входов; по умолчанию - порядок первого появления в тексте
        name: Имя композиции

    Returns:
        ComposedFunction
    """
    parts = _split_outputs(text)
    names = list(input_names) if input_names is not None else collect_input_names(text)
    if not names:
        raise ExpressionSyntaxError("Выражение не содержит входных переменных")
    builder = RecipeBuilder(names)
    translator = _Translator(builder)
    outputs = [translator.visit(_parse(part)) for part in parts]
    recipe = builder.build(outputs, name=name or text)
    logger.debug(f"Разобрано выражение '{text}': {len(recipe.stages)} шагов")
    return recipe
