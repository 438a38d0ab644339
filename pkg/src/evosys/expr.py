"""Small arithmetic-expression language for manifest-declared symbols.

Grammar: numbers, the variables ``v`` (state value, nonlinearities only),
``t`` and ``T = max(0, t)``, the constant ``pi``, the operators ``+ - * /``
and ``**`` (or ``^``), and the functions ``abs min max sin cos exp sqrt``.
Expressions compile to numpy-vectorised callables.
"""

from __future__ import annotations

import ast

import numpy as np

FUNCTIONS = {
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
}
CONSTANTS = {"pi": np.pi}

_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Call,
    ast.Name,
    ast.Load,
    ast.Constant,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
)


class ExpressionError(ValueError):
    pass


def compile_expr(src: str, variables: tuple[str, ...] = ("v", "t")):
    """Compile ``src`` into ``fn(**values)``; ``T`` is derived from ``t``."""
    text = src.replace("^", "**")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {src!r}: {exc.msg}") from None
    allowed = set(variables) | set(CONSTANTS) | ({"T"} if "t" in variables else set())
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ExpressionError(f"{src!r}: construct {type(node).__name__} not allowed")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                raise ExpressionError(f"{src!r}: unknown function")
            if node.keywords:
                raise ExpressionError(f"{src!r}: keyword arguments not allowed")
        elif isinstance(node, ast.Name):
            if node.id not in allowed and node.id not in FUNCTIONS:
                raise ExpressionError(f"{src!r}: unknown name {node.id!r}")
        elif isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ExpressionError(f"{src!r}: only numeric literals allowed")
    code = compile(tree, "<expr>", "eval")

    def fn(**values):
        ns = dict(CONSTANTS)
        ns.update(FUNCTIONS)
        for k in variables:
            ns[k] = np.asarray(values[k], dtype=float)
        if "t" in variables:
            ns["T"] = np.maximum(0.0, ns["t"])
        out = eval(code, {"__builtins__": {}}, ns)  # names whitelisted above
        return np.asarray(out, dtype=float)

    fn.source = src
    return fn
