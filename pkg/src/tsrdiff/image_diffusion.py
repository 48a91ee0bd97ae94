"""Residual-shifting Gaussian chain over latents.

Latents are plain float arrays of shape (c, h, w) or batched (N, c, h, w).
``t`` may be an int or, for batches, one integer per sample. All noise is
supplied by the caller.
"""

from __future__ import annotations

import numpy as np

from .schedules import ShiftSchedule


def _check_shapes(*arrays: np.ndarray) -> None:
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ValueError(f"latent shape mismatch: {shape} vs {a.shape}")
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("latent contains non-finite entries")


def _gather(values: np.ndarray, t, like: np.ndarray, lo: int, hi: int):
    t_arr = np.asarray(t)
    if not np.issubdtype(t_arr.dtype, np.integer):
        raise TypeError("timestep must be integer")
    if np.any(t_arr < lo) or np.any(t_arr > hi):
        raise ValueError(f"timestep {t} outside [{lo}, {hi}]")
    if t_arr.ndim == 0:
        return values[int(t_arr)]
    if t_arr.shape != like.shape[:1]:
        raise ValueError("per-sample timesteps must match the batch size")
    return values[t_arr].reshape((-1,) + (1,) * (like.ndim - 1))


def latent_residual(z_y: np.ndarray, z0: np.ndarray) -> np.ndarray:
    """e_0 = z_y - z_0, the shift the forward chain injects."""
    _check_shapes(z_y, z0)
    return z_y - z0


def forward_step(z_prev, e0, t, sched: ShiftSchedule, noise) -> np.ndarray:
    """One forward transition: ``z_prev + alpha_t e0 + kappa sqrt(alpha_t) noise``."""
    _check_shapes(z_prev, e0, noise)
    a = _gather(np.concatenate([[0.0], sched.alpha]), t, z_prev, 1, sched.T)
    return z_prev + a * e0 + sched.kappa * np.sqrt(a) * noise


def forward_marginal(z0, e0, t, sched: ShiftSchedule, noise) -> np.ndarray:
    """Closed-form sample of ``q(z_t | z_0, y)``; ``t = 0`` returns ``z0`` unchanged."""
    _check_shapes(z0, e0, noise)
    eta = _gather(sched.eta, t, z0, 0, sched.T)
    return z0 + eta * e0 + sched.kappa * np.sqrt(eta) * noise


def init_inference(z_y, sched: ShiftSchedule, noise) -> np.ndarray:
    """Start state ``z_T = z_y + kappa * noise``."""
    _check_shapes(z_y, noise)
    return z_y + sched.kappa * noise


def posterior_coefficients(t, sched: ShiftSchedule) -> tuple:
    """(weight on z_t, weight on z0_hat, variance) of the reverse kernel at step ``t``."""
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > sched.T):
        raise ValueError(f"timestep {t} outside [1, {sched.T}]")
    eta_t = sched.eta[t_arr]
    eta_prev = sched.eta[t_arr - 1]
    alpha = sched.alpha[t_arr - 1]
    return eta_prev / eta_t, alpha / eta_t, sched.kappa**2 * eta_prev / eta_t * alpha


def reverse_step(z_t, z0_hat, t, sched: ShiftSchedule, noise) -> np.ndarray:
    """Sample ``z_{t-1}`` from the Gaussian posterior with ``z0_hat`` in place of ``z_0``.

    At ``t = 1`` both the ``z_t`` weight and the variance vanish and the
    result is ``z0_hat`` exactly.
    """
    _check_shapes(z_t, z0_hat, noise)
    _gather(sched.eta, t, z_t, 1, sched.T)
    c_t, c_0, var = posterior_coefficients(t, sched)
    t_arr = np.asarray(t)
    if t_arr.ndim:
        shape = (-1,) + (1,) * (z_t.ndim - 1)
        c_t, c_0, var = c_t.reshape(shape), c_0.reshape(shape), var.reshape(shape)
    return c_t * z_t + c_0 * z0_hat + np.sqrt(var) * noise
