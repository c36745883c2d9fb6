"""Unary and binary operators usable at tree nodes.

Every unary operator exposes ``derivs(y, order)`` which returns the list
``[f(y), f'(y), ..., f^(order)(y)]`` evaluated elementwise.  Expression
evaluation needs order 2 at leaves and order 3 at interior nodes (for the
parameter sensitivity of the Laplacian).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class UnaryOperator:
    """Base class; subclasses implement :meth:`derivs`."""

    name: str = "?"
    kind: str = "builtin"

    def derivs(self, y: np.ndarray, order: int) -> list[np.ndarray]:
        raise NotImplementedError

    def __call__(self, y):
        return self.derivs(np.asarray(y, dtype=float), 0)[0]

    def label(self) -> str:
        return self.name

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r})"


class BuiltinUnary(UnaryOperator):
    """Closed-form operator given as a list of derivative callables."""

    def __init__(self, name: str, chain: Sequence[Callable[[np.ndarray], np.ndarray]]):
        self.name = name
        self._chain = tuple(chain)

    def derivs(self, y, order):
        if order >= len(self._chain):
            raise ValueError(f"operator {self.name} provides derivatives up to order {len(self._chain) - 1}")
        return [self._chain[k](y) for k in range(order + 1)]


def _zeros(y):
    return np.zeros_like(y, dtype=float)


def _ones(y):
    return np.ones_like(y, dtype=float)


def _const(c):
    return lambda y: np.full_like(y, c, dtype=float)


def _neg(fn):
    return lambda y: -fn(y)


BUILTINS: dict[str, BuiltinUnary] = {
    op.name: op
    for op in [
        BuiltinUnary("0", [_zeros] * 4),
        BuiltinUnary("1", [_ones, _zeros, _zeros, _zeros]),
        BuiltinUnary("Id", [lambda y: np.array(y, dtype=float), _ones, _zeros, _zeros]),
        BuiltinUnary("x^2", [np.square, lambda y: 2.0 * y, _const(2.0), _zeros]),
        BuiltinUnary("x^3", [lambda y: y**3, lambda y: 3.0 * y**2, lambda y: 6.0 * y, _const(6.0)]),
        BuiltinUnary("x^4", [lambda y: y**4, lambda y: 4.0 * y**3, lambda y: 12.0 * y**2, lambda y: 24.0 * y]),
        BuiltinUnary("exp", [np.exp] * 4),
        BuiltinUnary("sin", [np.sin, np.cos, _neg(np.sin), _neg(np.cos)]),
        BuiltinUnary("cos", [np.cos, _neg(np.sin), _neg(np.cos), np.sin]),
    ]
}


class BinaryOperator:
    def __init__(self, name: str):
        if name not in BINARY_NAMES:
            raise ValueError(f"unknown binary operator {name!r}; supported: {sorted(BINARY_NAMES)}")
        self.name = name

    def __call__(self, a, b):
        if self.name == "+":
            return a + b
        if self.name == "-":
            return a - b
        if self.name == "*":
            return a * b
        return a / b

    def label(self) -> str:
        return {"*": "×", "/": "÷"}.get(self.name, self.name)

    def __repr__(self) -> str:
        return f"BinaryOperator({self.name!r})"


BINARY_NAMES = ("+", "-", "*", "/")
DEFAULT_BINARY = ("+", "-", "*")


def get_builtin(name: str) -> BuiltinUnary:
    try:
        return BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown builtin unary operator {name!r}; known: {sorted(BUILTINS)}") from None
