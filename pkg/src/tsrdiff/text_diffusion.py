"""Multinomial (uniform-noise) diffusion over fixed-length character sequences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedules import TextSchedule


@dataclass
class CharState:
    """Per-position symbol distributions plus OCR confidences.

    ``probs`` has shape (..., m, K) and each row sums to 1; ``conf`` has
    shape (..., m) with entries in [0, 1].
    """

    probs: np.ndarray
    conf: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.conf = np.asarray(self.conf, dtype=np.float64)
        if self.probs.ndim < 2 or self.conf.shape != self.probs.shape[:-1]:
            raise ValueError(f"conf shape {self.conf.shape} does not match probs {self.probs.shape}")
        if np.any(self.probs < 0) or not np.allclose(self.probs.sum(-1), 1.0, rtol=0, atol=1e-9):
            raise ValueError("probability rows must be non-negative and sum to 1")
        if np.any(self.conf < 0) or np.any(self.conf > 1):
            raise ValueError("confidences must lie in [0, 1]")

    @property
    def m(self) -> int:
        return self.probs.shape[-2]

    @property
    def K(self) -> int:
        return self.probs.shape[-1]

    def argmax(self) -> np.ndarray:
        return self.probs.argmax(-1)

    def with_conf(self, conf) -> "CharState":
        return CharState(self.probs, np.broadcast_to(np.asarray(conf, dtype=np.float64), self.conf.shape).copy())

    @classmethod
    def from_indices(cls, indices, K: int, conf=None) -> "CharState":
        idx = np.asarray(indices)
        if np.any(idx < 0) or np.any(idx >= K):
            raise ValueError(f"symbol index outside [0, {K})")
        conf = np.ones(idx.shape) if conf is None else conf
        return cls(np.eye(K)[idx], conf)


def pad_indices(text, max_len: int, blank: int) -> np.ndarray:
    """Right-pad a symbol sequence with the blank symbol to ``max_len``."""
    text = list(text)
    if not 1 <= len(text) <= max_len:
        raise ValueError(f"text length {len(text)} outside [1, {max_len}]")
    return np.array(text + [blank] * (max_len - len(text)), dtype=np.int64)


def _is_one_hot(p: np.ndarray) -> bool:
    return bool(np.all((p == 0) | (p == 1)) and np.all(p.sum(-1) == 1))


def _per_sample(values: np.ndarray, t, batch_shape: tuple, lo: int, hi: int) -> np.ndarray:
    """Broadcastable (..., 1, 1) coefficient for scalar or per-sample ``t``."""
    t_arr = np.asarray(t)
    if not np.issubdtype(t_arr.dtype, np.integer):
        raise TypeError("timestep must be integer")
    if np.any(t_arr < lo) or np.any(t_arr > hi):
        raise ValueError(f"timestep {t} outside [{lo}, {hi}]")
    if t_arr.ndim == 0:
        return np.asarray(values[int(t_arr)])
    if t_arr.shape != batch_shape[:1]:
        raise ValueError("per-sample timesteps must match the batch size")
    return values[t_arr].reshape((-1,) + (1,) * (len(batch_shape) + 1))


def categorical_sample(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of one index per row using caller-supplied uniforms."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != probs.shape[:-1]:
        raise ValueError(f"need one uniform per row: {u.shape} vs {probs.shape[:-1]}")
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf < u[..., None]).sum(-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def forward_probs(c0: CharState, t, tsched: TextSchedule) -> np.ndarray:
    """Row distributions ``alphabar_t c0 + (1 - alphabar_t) / K``."""
    ab = _per_sample(tsched.alphabar, t, c0.probs.shape[:-2], 0, tsched.T)
    return ab * c0.probs + (1.0 - ab) / c0.K


def text_forward_sample(c0: CharState, t, tsched: TextSchedule, u) -> CharState:
    """Corrupt one-hot ``c0`` to step ``t`` with uniform noise over K symbols."""
    if c0.K != tsched.K:
        raise ValueError(f"state has K={c0.K}, schedule K={tsched.K}")
    if not _is_one_hot(c0.probs):
        raise ValueError("forward sampling needs one-hot rows")
    _per_sample(tsched.alphabar, t, c0.probs.shape[:-2], 1, tsched.T)
    idx = categorical_sample(forward_probs(c0, t, tsched), u)
    return CharState(np.eye(c0.K)[idx], c0.conf.copy())


def text_posterior(c_t: CharState, c_pred: CharState, t, tsched: TextSchedule) -> CharState:
    """Posterior over ``c_{t-1}`` with the model prediction standing in for ``c_0``.

    Per position: ``[a_t c_t + (1-a_t)/K] * [ab_{t-1} c_pred + (1-ab_{t-1})/K]``,
    normalised.
    """
    if c_t.probs.shape != c_pred.probs.shape:
        raise ValueError("c_t and c_pred must share shape")
    K = c_t.K
    batch = c_t.probs.shape[:-2]
    a = _per_sample(tsched.alpha, np.asarray(t) - 1, batch, 1, tsched.T - 1)
    ab_prev = _per_sample(tsched.alphabar, np.asarray(t) - 1, batch, 1, tsched.T - 1)
    lik = a * c_t.probs + (1.0 - a) / K
    prior = ab_prev * c_pred.probs + (1.0 - ab_prev) / K
    pi = lik * prior
    return CharState(pi / pi.sum(-1, keepdims=True), c_t.conf.copy())


def text_final_sample(c_pred: CharState, u=None, argmax: bool = False) -> CharState:
    """Draw one-hot rows from ``c_pred`` (or take the per-row argmax)."""
    if argmax:
        idx = c_pred.argmax()
    else:
        if u is None:
            raise ValueError("sampling needs uniforms unless argmax=True")
        idx = categorical_sample(c_pred.probs, u)
    return CharState(np.eye(c_pred.K)[idx], c_pred.conf.copy())


def apply_confidence(c: CharState) -> np.ndarray:
    """Scale each position's distribution by its confidence (row sums become ``conf``)."""
    return c.conf[..., None] * c.probs


def transition_matrix(alpha: float, K: int) -> np.ndarray:
    """Row-stochastic one-step kernel ``alpha I + (1 - alpha)/K``."""
    return alpha * np.eye(K) + (1.0 - alpha) / K * np.ones((K, K))
