"""Finite expressions on fixed binary trees.

A tree node is either unary (``alpha * u(child) + beta``) or binary
(``b(left, right)``).  Unary nodes without a child are leaves and read the raw
input ``x`` componentwise: ``<alpha, u.(x)> + beta`` with a d-vector
``alpha``.  Nodes are stored in inorder, so an operator sequence is simply a
tuple with one index per node.

Derivatives are propagated in forward mode: every node returns its value,
its spatial gradient and Laplacian, and optionally the sensitivities of all
three with respect to the flat parameter vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .operators import DEFAULT_BINARY, BinaryOperator, UnaryOperator

DIV_FLOOR = 1e-12
SUPPORTED_DEPTHS = (1, 2, 3)


class DomainError(ValueError):
    """Raised when a division node meets a near-zero denominator."""


@dataclass(frozen=True)
class Node:
    kind: str  # "unary" | "binary"
    children: tuple[int, ...]
    position: int

    @property
    def is_leaf(self) -> bool:
        return self.kind == "unary" and not self.children


@dataclass(frozen=True)
class TreeSkeleton:
    depth: int
    input_dim: int
    nodes: tuple[Node, ...]
    root: int

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(n.kind for n in self.nodes)

    def to_dict(self) -> dict:
        return {"depth": self.depth, "input_dim": self.input_dim}


def build_skeleton(depth: int, input_dim: int) -> TreeSkeleton:
    """Canonical tree of the given depth, nodes listed in inorder.

    depth 1: ``u1(x)``; depth 2: ``b(u1(x), u2(x))``;
    depth 3: ``u3(b(u1(x), u2(x)))``.
    """
    if depth not in SUPPORTED_DEPTHS:
        raise ValueError(f"unsupported tree depth {depth}; supported depths are {SUPPORTED_DEPTHS}")
    if input_dim < 1:
        raise ValueError("input_dim must be positive")
    if depth == 1:
        nodes = (Node("unary", (), 0),)
        root = 0
    elif depth == 2:
        nodes = (Node("unary", (), 0), Node("binary", (0, 2), 1), Node("unary", (), 2))
        root = 1
    else:
        nodes = (
            Node("unary", (), 0),
            Node("binary", (0, 2), 1),
            Node("unary", (), 2),
            Node("unary", (1,), 3),
        )
        root = 3
    return TreeSkeleton(depth, input_dim, nodes, root)


class ParamLayout:
    """Maps the flat parameter vector onto per-node (alpha, beta)."""

    def __init__(self, skel: TreeSkeleton):
        self.skel = skel
        self.slots: dict[int, tuple[slice, int]] = {}
        pos = 0
        for i, node in enumerate(skel.nodes):
            if node.kind != "unary":
                continue
            n_alpha = skel.input_dim if node.is_leaf else 1
            self.slots[i] = (slice(pos, pos + n_alpha), pos + n_alpha)
            pos += n_alpha + 1
        self.size = pos

    def unpack(self, theta) -> dict[int, tuple[np.ndarray, float]]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise ValueError(f"parameter vector must have length {self.size}, got {theta.shape}")
        return {i: (theta[a].copy(), float(theta[b])) for i, (a, b) in self.slots.items()}

    def pack(self, params: dict[int, tuple[Sequence[float], float]]) -> np.ndarray:
        theta = np.zeros(self.size)
        for i, (a, b) in self.slots.items():
            alpha, beta = params[i]
            theta[a] = alpha
            theta[b] = beta
        return theta

    def to_list(self) -> list[dict]:
        return [
            {"node": i, "alpha": [a.start, a.stop], "beta": b}
            for i, (a, b) in sorted(self.slots.items())
        ]


def init_theta(skel: TreeSkeleton, rng: np.random.Generator) -> np.ndarray:
    """Leaf scales ~ U[-1, 1] / sqrt(d); interior scales 1; biases 0."""
    layout = ParamLayout(skel)
    theta = np.zeros(layout.size)
    scale = skel.input_dim ** -0.5
    for i, (a, _) in sorted(layout.slots.items()):
        if skel.nodes[i].is_leaf:
            theta[a] = rng.uniform(-1.0, 1.0, size=a.stop - a.start) * scale
        else:
            theta[a] = 1.0
    return theta


class OperatorPool:
    """Admissible operators: unary ones for unary nodes, binary for binary."""

    def __init__(self, unary: Sequence[UnaryOperator], binary: Sequence[str] = DEFAULT_BINARY):
        if not unary:
            raise ValueError("operator pool needs at least one unary operator")
        names = [op.name for op in unary]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate unary operator names in pool: {names}")
        self.unary = list(unary)
        self.binary = [BinaryOperator(b) for b in binary]
        if not self.binary:
            raise ValueError("operator pool needs at least one binary operator")

    def choices(self, kind: str) -> int:
        return len(self.unary) if kind == "unary" else len(self.binary)

    def resolve(self, skel: TreeSkeleton, e: Sequence[int]) -> list:
        if len(e) != skel.size:
            raise ValueError(f"operator sequence has length {len(e)}, tree has {skel.size} nodes")
        ops = []
        for node, idx in zip(skel.nodes, e):
            table = self.unary if node.kind == "unary" else self.binary
            if not 0 <= idx < len(table):
                raise ValueError(f"operator index {idx} invalid for {node.kind} node {node.position}")
            ops.append(table[idx])
        return ops

    def names(self, skel: TreeSkeleton, e: Sequence[int]) -> list[str]:
        return [op.name for op in self.resolve(skel, e)]

    def encode(self, skel: TreeSkeleton, names: Sequence[str]) -> tuple[int, ...]:
        out = []
        for node, name in zip(skel.nodes, names):
            table = self.unary if node.kind == "unary" else self.binary
            lookup = [op.name for op in table]
            if name not in lookup:
                raise ValueError(f"operator {name!r} not available for {node.kind} node")
            out.append(lookup.index(name))
        return tuple(out)


class PointSet:
    """A fixed batch of points with memoised leaf operator derivatives.

    Leaf inputs are raw coordinates, so ``u(x_ij)`` and its derivatives only
    depend on the operator and can be reused across parameter updates.
    """

    def __init__(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("points must be an (n, d) array")
        self.X = X
        self._cache: dict[tuple[str, int], list[np.ndarray]] = {}

    def leaf_derivs(self, op: UnaryOperator, order: int) -> list[np.ndarray]:
        for o in range(order, 4):
            hit = self._cache.get((op.name, o))
            if hit is not None:
                return hit
        hit = op.derivs(self.X, order)
        self._cache[(op.name, order)] = hit
        return hit

    def warm(self, ops: Sequence[UnaryOperator], order: int = 2) -> None:
        for op in ops:
            self.leaf_derivs(op, order)


@dataclass
class Jet:
    value: np.ndarray
    grad: np.ndarray
    lap: np.ndarray


@dataclass
class JetSensitivity:
    """d(value)/dθ (n, P), d(grad)/dθ (n, P, d), d(lap)/dθ (n, P)."""

    value: np.ndarray
    grad: np.ndarray
    lap: np.ndarray


class _Out:
    __slots__ = ("v", "g", "l", "dv", "dg", "dl")

    def __init__(self, v, g=None, l=None, dv=None, dg=None, dl=None):
        self.v, self.g, self.l = v, g, l
        self.dv, self.dg, self.dl = dv, dg, dl


def _as_points(x) -> tuple[PointSet, bool]:
    if isinstance(x, PointSet):
        return x, False
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    return PointSet(X[None, :] if single else X), single


class _Propagator:
    def __init__(self, skel, ops, theta, pts: PointSet, jets: bool, sens: bool):
        if len(ops) != skel.size:
            raise ValueError("operator list does not match tree size")
        if pts.X.shape[1] != skel.input_dim:
            raise ValueError(f"points have dimension {pts.X.shape[1]}, tree expects {skel.input_dim}")
        self.skel, self.ops, self.pts = skel, ops, pts
        self.layout = ParamLayout(skel)
        self.theta = np.asarray(theta, dtype=float)
        if self.theta.shape != (self.layout.size,):
            raise ValueError(f"parameter vector must have length {self.layout.size}")
        self.jets, self.sens = jets, sens
        self.n, self.d = pts.X.shape
        self.P = self.layout.size

    def run(self, need_dg: bool) -> _Out:
        return self._node(self.skel.root, need_dg)

    def _node(self, i: int, need_dg: bool) -> _Out:
        node = self.skel.nodes[i]
        if node.is_leaf:
            return self._leaf(i, need_dg)
        if node.kind == "unary":
            return self._unary(i, need_dg)
        return self._binary(i, need_dg)

    def _leaf(self, i, need_dg):
        op = self.ops[i]
        a_sl, b_ix = self.layout.slots[i]
        alpha, beta = self.theta[a_sl], self.theta[b_ix]
        F = self.pts.leaf_derivs(op, 2 if self.jets else 0)
        out = _Out(F[0] @ alpha + beta)
        if self.jets:
            out.g = F[1] * alpha
            out.l = F[2] @ alpha
        if self.sens:
            n, P = self.n, self.P
            out.dv = np.zeros((n, P))
            out.dv[:, a_sl] = F[0]
            out.dv[:, b_ix] = 1.0
            if self.jets:
                out.dl = np.zeros((n, P))
                out.dl[:, a_sl] = F[2]
                if need_dg:
                    out.dg = np.zeros((n, P, self.d))
                    idx = np.arange(self.d)
                    out.dg[:, a_sl.start + idx, idx] = F[1]
        return out

    def _unary(self, i, need_dg):
        op = self.ops[i]
        a_sl, b_ix = self.layout.slots[i]
        alpha, beta = self.theta[a_sl][0], self.theta[b_ix]
        h = self._node(self.skel.nodes[i].children[0], True)
        order = (3 if self.sens else 2) if self.jets else (1 if self.sens else 0)
        f = op.derivs(h.v, order)
        out = _Out(alpha * f[0] + beta)
        if self.jets:
            gg = np.einsum("nd,nd->n", h.g, h.g)
            out.g = alpha * f[1][:, None] * h.g
            out.l = alpha * (f[2] * gg + f[1] * h.l)
        if self.sens:
            out.dv = alpha * f[1][:, None] * h.dv
            out.dv[:, a_sl.start] = f[0]
            out.dv[:, b_ix] = 1.0
            if self.jets:
                hg_dg = np.einsum("nd,npd->np", h.g, h.dg)
                out.dl = alpha * (
                    (f[3] * gg)[:, None] * h.dv
                    + 2.0 * f[2][:, None] * hg_dg
                    + (f[2] * h.l)[:, None] * h.dv
                    + f[1][:, None] * h.dl
                )
                out.dl[:, a_sl.start] = f[2] * gg + f[1] * h.l
                if need_dg:
                    out.dg = alpha * (
                        f[2][:, None, None] * h.dv[:, :, None] * h.g[:, None, :]
                        + f[1][:, None, None] * h.dg
                    )
                    out.dg[:, a_sl.start, :] = f[1][:, None] * h.g
        return out

    def _binary(self, i, need_dg):
        name = self.ops[i].name
        li, ri = self.skel.nodes[i].children
        linear = name in ("+", "-")
        A = self._node(li, need_dg or not linear)
        B = self._node(ri, need_dg or not linear)
        if linear:
            s = 1.0 if name == "+" else -1.0

            def comb(x, y):
                return None if x is None else x + s * y

            return _Out(comb(A.v, B.v), comb(A.g, B.g), comb(A.l, B.l),
                        comb(A.dv, B.dv), comb(A.dg, B.dg), comb(A.dl, B.dl))
        if name == "*":
            return self._mul(A, B, need_dg)
        return self._div(A, B, need_dg)

    def _mul(self, A, B, need_dg):
        out = _Out(A.v * B.v)
        if self.jets:
            out.g = A.v[:, None] * B.g + B.v[:, None] * A.g
            out.l = A.v * B.l + B.v * A.l + 2.0 * np.einsum("nd,nd->n", A.g, B.g)
        if self.sens:
            out.dv = A.dv * B.v[:, None] + A.v[:, None] * B.dv
            if self.jets:
                out.dl = (
                    A.dv * B.l[:, None] + A.v[:, None] * B.dl
                    + B.dv * A.l[:, None] + B.v[:, None] * A.dl
                    + 2.0 * (np.einsum("npd,nd->np", A.dg, B.g) + np.einsum("nd,npd->np", A.g, B.dg))
                )
                if need_dg:
                    out.dg = (
                        A.dv[:, :, None] * B.g[:, None, :] + A.v[:, None, None] * B.dg
                        + B.dv[:, :, None] * A.g[:, None, :] + B.v[:, None, None] * A.dg
                    )
        return out

    def _div(self, A, B, need_dg):
        if np.any(np.abs(B.v) < DIV_FLOOR):
            raise DomainError(f"denominator below {DIV_FLOOR:g}")
        b = B.v
        q = A.v / b
        out = _Out(q)
        if self.jets:
            out.g = (A.g - q[:, None] * B.g) / b[:, None]
            out.l = (A.l - 2.0 * np.einsum("nd,nd->n", out.g, B.g) - q * B.l) / b
        if self.sens:
            out.dv = (A.dv - q[:, None] * B.dv) / b[:, None]
            if self.jets:
                dgq = (
                    A.dg - out.dv[:, :, None] * B.g[:, None, :] - q[:, None, None] * B.dg
                    - B.dv[:, :, None] * out.g[:, None, :]
                ) / b[:, None, None]
                out.dl = (
                    A.dl
                    - 2.0 * (np.einsum("npd,nd->np", dgq, B.g) + np.einsum("nd,npd->np", out.g, B.dg))
                    - out.dv * B.l[:, None] - q[:, None] * B.dl - B.dv * out.l[:, None]
                ) / b[:, None]
                if need_dg:
                    out.dg = dgq
        return out


def evaluate(skel: TreeSkeleton, ops, theta, x):
    """Value of the expression at one point (d,) or a batch (n, d)."""
    pts, single = _as_points(x)
    out = _Propagator(skel, ops, theta, pts, jets=False, sens=False).run(False)
    return float(out.v[0]) if single else out.v


def evaluate_with_sensitivity(skel: TreeSkeleton, ops, theta, x):
    """Values (n,) and d(value)/dθ (n, P); no spatial derivatives."""
    pts, _ = _as_points(x)
    out = _Propagator(skel, ops, theta, pts, jets=False, sens=True).run(False)
    return out.v, out.dv


def evaluate_jet(skel: TreeSkeleton, ops, theta, x) -> Jet:
    pts, single = _as_points(x)
    out = _Propagator(skel, ops, theta, pts, jets=True, sens=False).run(False)
    if single:
        return Jet(float(out.v[0]), out.g[0], float(out.l[0]))
    return Jet(out.v, out.g, out.l)


def evaluate_jet_with_sensitivity(skel: TreeSkeleton, ops, theta, x, need_grad: bool = True):
    """Jet plus its sensitivities with respect to every θ component.

    ``need_grad=False`` skips d(grad)/dθ where the tree does not need it
    internally (the residual loss only uses value and Laplacian).
    """
    pts, single = _as_points(x)
    out = _Propagator(skel, ops, theta, pts, jets=True, sens=True).run(need_grad)
    jet = Jet(out.v, out.g, out.l)
    sens = JetSensitivity(out.dv, out.dg, out.dl)
    if single:
        jet = Jet(float(out.v[0]), out.g[0], float(out.l[0]))
        sens = JetSensitivity(out.dv[0], None if out.dg is None else out.dg[0], out.dl[0])
    return jet, sens


def _fmt(v: float, precision: int) -> str:
    return f"{v:.{precision}g}"


def _affine(scale: str, core: str, beta: float, precision: int) -> str:
    if beta == 0:
        tail = ""
    elif beta < 0:
        tail = "-" + _fmt(-beta, precision)
    else:
        tail = "+" + _fmt(beta, precision)
    return f"{scale}{core}{tail}"


def to_expression_string(skel: TreeSkeleton, ops, theta, precision: int = 4) -> str:
    layout = ParamLayout(skel)
    params = layout.unpack(theta)

    def render(i: int) -> str:
        node = skel.nodes[i]
        op = ops[i]
        if node.kind == "binary":
            left, right = (_wrap(render(c)) for c in node.children)
            return f"{left} {op.label()} {right}"
        alpha, beta = params[i]
        if node.is_leaf:
            if skel.input_dim == 1:
                return _affine(_fmt(alpha[0], precision) + "·", f"{op.label()}(x)", beta, precision)
            shown = ", ".join(_fmt(a, precision) for a in alpha[:4])
            if alpha.size > 4:
                shown += ", …"
            return _affine("", f"⟨[{shown}], {op.label()}.(x)⟩", beta, precision)
        inner = render(node.children[0])
        return _affine(_fmt(alpha[0], precision) + "·", f"{op.label()}({inner})", beta, precision)

    return render(skel.root)


def _wrap(text: str) -> str:
    return f"({text})"


def export_expression(skel: TreeSkeleton, ops, theta, precision: int = 6) -> dict:
    """JSON-ready record of a finished expression."""
    layout = ParamLayout(skel)
    return {
        "skeleton": skel.to_dict(),
        "e": [op.name for op in ops],
        "theta": {"values": [float(t) for t in np.asarray(theta)], "layout": layout.to_list()},
        "render": to_expression_string(skel, ops, theta, precision),
    }


class Expression:
    """A concrete expression (tree, operators, parameters) usable as a function."""

    def __init__(self, skel: TreeSkeleton, ops, theta):
        self.skel = skel
        self.ops = list(ops)
        self.theta = np.asarray(theta, dtype=float)

    def __call__(self, X):
        return evaluate(self.skel, self.ops, self.theta, X)

    def jet(self, X) -> Jet:
        return evaluate_jet(self.skel, self.ops, self.theta, X)

    def render(self, precision: int = 4) -> str:
        return to_expression_string(self.skel, self.ops, self.theta, precision)

    def to_dict(self) -> dict:
        return export_expression(self.skel, self.ops, self.theta)

    @classmethod
    def from_dict(cls, rec: dict, operators: dict[str, object]) -> "Expression":
        skel = build_skeleton(rec["skeleton"]["depth"], rec["skeleton"]["input_dim"])
        ops = []
        for node, name in zip(skel.nodes, rec["e"]):
            if node.kind == "binary":
                ops.append(BinaryOperator(name))
            else:
                if name not in operators:
                    raise KeyError(f"expression uses operator {name!r} that is not available")
                ops.append(operators[name])
        return cls(skel, ops, rec["theta"]["values"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)
