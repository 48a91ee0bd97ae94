"""Central finite-difference verification of the VJP rules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .core import OPS, Node, Parameter, backward, no_grad, topo_order, variable


@dataclass
class GradcheckReport:
    per_op: dict[str, float] = field(default_factory=dict)
    end_to_end: float = 0.0
    tol: float = 1e-4

    @property
    def failing_ops(self) -> list[str]:
        return sorted(k for k, v in self.per_op.items() if not v <= self.tol)

    @property
    def passed(self) -> bool:
        return not self.failing_ops and self.end_to_end <= self.tol

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "end_to_end": self.end_to_end,
            "per_op": dict(sorted(self.per_op.items())),
            "failing_ops": self.failing_ops,
        }


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def check_node(node: Node, rng: np.random.Generator, h: float = 1e-5) -> float:
    """Compare one node's VJP rule against a central difference of its forward."""
    op = OPS[node.op]
    vals = [p.value for p in node.parents]
    w = rng.standard_normal(node.value.shape)
    in_grads = op.backward(w, node.value, node.cache, *vals, **node.attrs)
    worst = 0.0
    for i, gi in enumerate(in_grads):
        if gi is None:
            continue
        v = rng.standard_normal(vals[i].shape)
        plus = list(vals)
        minus = list(vals)
        plus[i] = vals[i] + h * v
        minus[i] = vals[i] - h * v
        fp, _ = op.forward(*plus, **node.attrs)
        fm, _ = op.forward(*minus, **node.attrs)
        fd = float(np.sum(w * (fp - fm)) / (2 * h))
        ad = float(np.sum(gi * v))
        worst = max(worst, _rel_err(ad, fd))
    return worst


def gradcheck(
    fragment: Callable[..., Node],
    inputs: Sequence[np.ndarray],
    params: Sequence[Parameter] = (),
    tol: float = 1e-4,
    h: float = 1e-5,
    seed: int = 0,
) -> GradcheckReport:
    """Check every op in ``fragment(*inputs)`` plus the end-to-end JVP.

    ``params`` are the trainable parameters the fragment closes over; they
    are perturbed together with the inputs for the end-to-end check.
    """
    rng = np.random.default_rng(seed)
    leaves = [variable(np.array(x, dtype=np.float64)) for x in inputs]
    params = [p for p in params if p.trainable]
    for p in params:
        p.grad = None
    out = fragment(*leaves)
    if not out.requires_grad:
        raise ValueError("fragment output does not depend on any checked input")

    report = GradcheckReport(tol=tol)
    for node in topo_order(out):
        if node.op is None:
            continue
        if node.op not in OPS:
            raise KeyError(f"unsupported op {node.op!r} in fragment")
        err = check_node(node, rng, h)
        report.per_op[node.op] = max(report.per_op.get(node.op, 0.0), err)

    w = rng.standard_normal(out.value.shape)
    backward(ops.sum_(ops.mul(out, Node(w))))
    targets = leaves + params
    dirs = [rng.standard_normal(t.value.shape) for t in targets]
    ad = sum(float(np.sum((t.grad if t.grad is not None else 0.0) * d)) for t, d in zip(targets, dirs))

    originals = [t.value.copy() for t in targets]

    def evaluate(sign: float) -> np.ndarray:
        for t, o, d in zip(targets, originals, dirs):
            t.value = o + sign * h * d
        with no_grad():
            xs = [Node(t.value) for t in leaves]
            return fragment(*xs).value

    try:
        fd = float(np.sum(w * (evaluate(1.0) - evaluate(-1.0))) / (2 * h))
    finally:
        for t, o in zip(targets, originals):
            t.value = o
        for p in params:
            p.grad = None
    report.end_to_end = _rel_err(ad, fd)
    return report
