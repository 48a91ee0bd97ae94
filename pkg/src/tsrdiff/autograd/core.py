"""Graph nodes, parameters and reverse-mode accumulation."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

_GRAD_ENABLED = True


@dataclass(frozen=True)
class OpDef:
    """Forward and vector-Jacobian rule for one primitive.

    ``forward(*values, **attrs)`` returns ``(out, cache)``.
    ``backward(g, out, cache, *values, **attrs)`` returns one gradient (or
    ``None``) per input.
    """

    name: str
    forward: Callable
    backward: Callable


OPS: dict[str, OpDef] = {}


def register(name: str):
    def deco(cls):
        OPS[name] = OpDef(name, cls.forward, cls.backward)
        return cls

    return deco


class Node:
    """A value in the computation graph."""

    __slots__ = ("value", "grad", "parents", "op", "attrs", "cache", "requires_grad")

    def __init__(self, value, parents=(), op=None, attrs=None, cache=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.op = op
        self.attrs = attrs or {}
        self.cache = cache
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def backward(self) -> None:
        backward(self)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.shape})"


class Parameter(Node):
    """A named leaf that the optimizer may update."""

    __slots__ = ("name", "trainable")

    def __init__(self, value, name: str | None = None, trainable: bool = True):
        super().__init__(value, requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    def freeze(self) -> None:
        self.trainable = False
        self.requires_grad = False
        self.grad = None

    def unfreeze(self) -> None:
        self.trainable = True
        self.requires_grad = True

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def constant(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(x)


def variable(x) -> Node:
    """Leaf that receives a gradient (used for inputs under test)."""
    return Node(x, requires_grad=True)


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def apply(name: str, *inputs, **attrs) -> Node:
    if name not in OPS:
        raise KeyError(f"unsupported op {name!r}")
    nodes = [constant(x) for x in inputs]
    out, cache = OPS[name].forward(*[n.value for n in nodes], **attrs)
    if not (_GRAD_ENABLED and any(n.requires_grad for n in nodes)):
        return Node(out)
    return Node(out, parents=nodes, op=name, attrs=attrs, cache=cache, requires_grad=True)


def topo_order(root: Node) -> list[Node]:
    """Nodes reachable from ``root`` through grad-requiring edges, inputs first."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaves that already hold a gradient are added to, so callers zero
    gradients between steps.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is detached from every trainable leaf")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.op is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        op = OPS[node.op]
        in_grads = op.backward(g, node.value, node.cache, *[p.value for p in node.parents], **node.attrs)
        for p, pg in zip(node.parents, in_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise RuntimeError(f"{node.op}: gradient shape {pg.shape} != input shape {p.shape}")
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg
