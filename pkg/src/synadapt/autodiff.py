"""Minimal reverse-mode tape over 2-D float64 arrays.

Every node holds a matrix value; scalars are 1x1 matrices. Backward
rules are hand-derived per primitive and arbitrated by the central
finite-difference suite in `gradcheck`. Gradient accumulation walks the
tape in reverse construction order, so backward passes are deterministic
for a fixed graph.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor
from .errors import DimensionError


class Var:
    """One tape node: a value, its accumulated gradient, and parent links."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value: np.ndarray, requires_grad: bool = False,
                 parents: tuple["Var", ...] = (),
                 backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None):
        self.value = tensor.as_matrix(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def backward(self) -> None:
        """Accumulate gradients of this (scalar) node into all ancestors."""
        if self.value.shape != (1, 1):
            raise DimensionError("backward() expects a 1x1 loss node")
        order: list[Var] = []
        seen: set[int] = set()
        stack: list[tuple[Var, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((1, 1))
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad += g


def const(x) -> Var:
    return Var(x, requires_grad=False)


def leaf(x) -> Var:
    return Var(x, requires_grad=True)


def param_var(p: tensor.Parameter) -> Var:
    """Tape node for a Parameter; backward adds straight into `p.grad`.

    Frozen and non-trainable parameters enter the graph as constants, so
    no gradient is ever computed for them.
    """
    if not p.trainable:
        return Var(p.value, requires_grad=False)
    anchor = Var(p.value, requires_grad=True)

    def bw(g: np.ndarray):
        p.grad += g
        return (None,)

    return Var(p.value, parents=(anchor,), backward=bw)


def _needs(v: Var) -> bool:
    return v.requires_grad


def add(a: Var, b: Var) -> Var:
    if a.shape == b.shape:
        bw = lambda g: (g if _needs(a) else None, g if _needs(b) else None)
    elif b.shape == (1, a.shape[1]):
        # row-vector broadcast (bias add)
        bw = lambda g: (g if _needs(a) else None,
                        np.sum(g, axis=0, keepdims=True) if _needs(b) else None)
    else:
        raise DimensionError(f"add shapes {a.shape} + {b.shape}")
    return Var(a.value + b.value, parents=(a, b), backward=bw)


def sub(a: Var, b: Var) -> Var:
    if a.shape != b.shape:
        raise DimensionError(f"sub shapes {a.shape} - {b.shape}")
    return Var(a.value - b.value, parents=(a, b),
               backward=lambda g: (g if _needs(a) else None,
                                   -g if _needs(b) else None))


def mul(a: Var, b: Var) -> Var:
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes {a.shape} * {b.shape}")
    return Var(a.value * b.value, parents=(a, b),
               backward=lambda g: (g * b.value if _needs(a) else None,
                                   g * a.value if _needs(b) else None))


def div(a: Var, b: Var) -> Var:
    if a.shape != b.shape:
        raise DimensionError(f"div shapes {a.shape} / {b.shape}")
    return Var(a.value / b.value, parents=(a, b),
               backward=lambda g: (g / b.value if _needs(a) else None,
                                   -g * a.value / (b.value * b.value) if _needs(b) else None))


def scale(a: Var, s: float) -> Var:
    return Var(a.value * s, parents=(a,),
               backward=lambda g: (g * s if _needs(a) else None,))


def add_const(a: Var, c: np.ndarray) -> Var:
    return Var(a.value + c, parents=(a,), backward=lambda g: (g if _needs(a) else None,))


def mul_const(a: Var, c: np.ndarray) -> Var:
    return Var(a.value * c, parents=(a,), backward=lambda g: (g * c if _needs(a) else None,))


def matmul(a: Var, b: Var) -> Var:
    def bw(g: np.ndarray):
        ga = tensor.matmul(g, b.value.T) if _needs(a) else None
        gb = tensor.matmul(a.value.T, g) if _needs(b) else None
        return ga, gb
    return Var(tensor.matmul(a.value, b.value), parents=(a, b), backward=bw)


def transpose(a: Var) -> Var:
    return Var(a.value.T.copy(), parents=(a,),
               backward=lambda g: (g.T.copy() if _needs(a) else None,))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return Var(out, parents=(a,), backward=lambda g: (g * out if _needs(a) else None,))


def log(a: Var) -> Var:
    return Var(np.log(a.value), parents=(a,),
               backward=lambda g: (g / a.value if _needs(a) else None,))


def sum_all(a: Var) -> Var:
    return Var(np.array([[np.sum(a.value)]]), parents=(a,),
               backward=lambda g: (np.full_like(a.value, g[0, 0]) if _needs(a) else None,))


def sum_rows(a: Var) -> Var:
    """Sum across columns, one value per row (m x 1)."""
    return Var(np.sum(a.value, axis=1, keepdims=True), parents=(a,),
               backward=lambda g: (np.repeat(g, a.shape[1], axis=1) if _needs(a) else None,))


def sum_cols(a: Var) -> Var:
    """Sum down rows, one value per column (1 x n)."""
    return Var(np.sum(a.value, axis=0, keepdims=True), parents=(a,),
               backward=lambda g: (np.repeat(g, a.shape[0], axis=0) if _needs(a) else None,))


def concat_cols(parts: Sequence[Var]) -> Var:
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise DimensionError("concat_cols row mismatch")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bw(g: np.ndarray):
        return tuple(
            g[:, offsets[i]:offsets[i + 1]].copy() if _needs(p) else None
            for i, p in enumerate(parts))

    return Var(np.concatenate([p.value for p in parts], axis=1),
               parents=tuple(parts), backward=bw)


def vstack(parts: Sequence[Var]) -> Var:
    cols = parts[0].shape[1]
    if any(p.shape[1] != cols for p in parts):
        raise DimensionError("vstack column mismatch")
    heights = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + heights)

    def bw(g: np.ndarray):
        return tuple(
            g[offsets[i]:offsets[i + 1], :].copy() if _needs(p) else None
            for i, p in enumerate(parts))

    return Var(np.concatenate([p.value for p in parts], axis=0),
               parents=tuple(parts), backward=bw)


def slice_rows(a: Var, start: int, stop: int) -> Var:
    def bw(g: np.ndarray):
        if not _needs(a):
            return (None,)
        out = np.zeros_like(a.value)
        out[start:stop, :] = g
        return (out,)
    return Var(a.value[start:stop, :].copy(), parents=(a,), backward=bw)


def slice_cols(a: Var, start: int, stop: int) -> Var:
    def bw(g: np.ndarray):
        if not _needs(a):
            return (None,)
        out = np.zeros_like(a.value)
        out[:, start:stop] = g
        return (out,)
    return Var(a.value[:, start:stop].copy(), parents=(a,), backward=bw)


def softmax_rows(a: Var) -> Var:
    """Row softmax; -inf inputs give exactly-zero outputs and zero gradient."""
    y = tensor.softmax_rows(a.value)

    def bw(g: np.ndarray):
        if not _needs(a):
            return (None,)
        dot = np.sum(g * y, axis=1, keepdims=True)
        return (y * (g - dot),)

    return Var(y, parents=(a,), backward=bw)


def layer_norm(x: Var, gain: Var, bias: Var, eps: float = 1e-12) -> Var:
    mean = np.mean(x.value, axis=1, keepdims=True)
    centered = x.value - mean
    var = np.mean(centered * centered, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normed = centered * inv_std
    out = normed * gain.value + bias.value

    def bw(g: np.ndarray):
        gx = None
        if _needs(x):
            gy = g * gain.value
            gx = inv_std * (gy - np.mean(gy, axis=1, keepdims=True)
                            - normed * np.mean(gy * normed, axis=1, keepdims=True))
        ggain = np.sum(g * normed, axis=0, keepdims=True) if _needs(gain) else None
        gbias = np.sum(g, axis=0, keepdims=True) if _needs(bias) else None
        return gx, ggain, gbias

    return Var(out, parents=(x, gain, bias), backward=bw)


def gelu(a: Var) -> Var:
    return Var(tensor.gelu(a.value), parents=(a,),
               backward=lambda g: (g * tensor.gelu_grad(a.value) if _needs(a) else None,))


def l2_normalize_rows(a: Var) -> Var:
    """Row normalization; the zero-row subgradient is taken as zero."""
    norms = np.sqrt(np.sum(a.value * a.value, axis=1, keepdims=True))
    nonzero = norms > 0.0
    safe = np.where(nonzero, norms, 1.0)
    y = np.where(nonzero, a.value / safe, 0.0)

    def bw(g: np.ndarray):
        if not _needs(a):
            return (None,)
        dot = np.sum(g * y, axis=1, keepdims=True)
        return (np.where(nonzero, (g - y * dot) / safe, 0.0),)

    return Var(y, parents=(a,), backward=bw)


def where_const(cond: np.ndarray, a: Var, fill: np.ndarray) -> Var:
    """Select a's entries where cond holds, a constant fill elsewhere."""
    cond = np.asarray(cond, dtype=bool)
    return Var(np.where(cond, a.value, fill), parents=(a,),
               backward=lambda g: (np.where(cond, g, 0.0) if _needs(a) else None,))
