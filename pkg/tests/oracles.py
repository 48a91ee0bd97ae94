"""Independent reference computations used by several test modules."""

from __future__ import annotations

import itertools

import numpy as np


def gaussian_product_on_grid(m1: float, v1: float, m2: float, v2: float, n: int = 400001, width: float = 12.0):
    """Mean and variance of the normalised product of two Gaussian densities, by quadrature.

    The grid spans +-``width`` standard deviations of the narrower factor
    around the analytic product centre; Simpson weights give near machine
    precision for smooth integrands.
    """
    v = 1.0 / (1.0 / v1 + 1.0 / v2)
    centre = v * (m1 / v1 + m2 / v2)
    half = width * np.sqrt(min(v1, v2))
    x = np.linspace(centre - half, centre + half, n)
    logp = -0.5 * (x - m1) ** 2 / v1 - 0.5 * (x - m2) ** 2 / v2
    p = np.exp(logp - logp.max())
    w = np.ones(n)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    z = np.sum(w * p)
    mean = np.sum(w * p * x) / z
    var = np.sum(w * p * (x - mean) ** 2) / z
    return mean, var


def levenshtein(a, b) -> int:
    """Textbook O(|a||b|) dynamic programme."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def categorical_bayes(c_t: int, c0: int, alpha_t: float, alphabar_prev: float, K: int) -> np.ndarray:
    """q(c_{t-1} = k | c_t, c_0) by enumerating k with the one-step and marginal kernels."""
    def step(frm, to):  # q(c_t = to | c_{t-1} = frm)
        return alpha_t * (frm == to) + (1 - alpha_t) / K

    def marg(frm, to):  # q(c_{t-1} = to | c_0 = frm)
        return alphabar_prev * (frm == to) + (1 - alphabar_prev) / K

    joint = np.array([step(k, c_t) * marg(c0, k) for k in range(K)])
    return joint / joint.sum()


def chain_marginal(alphas, K: int, start: int) -> np.ndarray:
    """Distribution after applying the per-step kernels one at a time, by enumeration of paths."""
    probs = np.zeros(K)
    for path in itertools.product(range(K), repeat=len(alphas)):
        p, cur = 1.0, start
        for a, nxt in zip(alphas, path):
            p *= a * (cur == nxt) + (1 - a) / K
            cur = nxt
        probs[cur] += p
    return probs
