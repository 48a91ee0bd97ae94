"""Image-chain shifting schedule and text-chain categorical schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class ShiftSchedule:
    """Residual-shifting sequence ``eta`` (length T+1, ``eta[0] == 0``).

    ``alpha[t-1]`` is the per-step increment ``eta[t] - eta[t-1]``.
    """

    T: int
    eta: np.ndarray
    alpha: np.ndarray
    kappa: float

    def __post_init__(self):
        eta, alpha = self.eta, self.alpha
        if eta.shape != (self.T + 1,) or alpha.shape != (self.T,):
            raise ScheduleError("eta must have T+1 entries and alpha T entries")
        if eta[0] != 0.0:
            raise ScheduleError("eta_0 must be exactly 0")
        if np.any(np.diff(eta) <= 0):
            raise ScheduleError("eta must be strictly increasing")
        if eta[-1] > 1.0:
            raise ScheduleError("eta_T must not exceed 1")
        if not np.array_equal(alpha, eta[1:] - eta[:-1]):
            raise ScheduleError("alpha must equal consecutive differences of eta")
        if not self.kappa > 0:
            raise ScheduleError("kappa must be positive")
        eta.setflags(write=False)
        alpha.setflags(write=False)

    def to_dict(self) -> dict:
        return {"T": self.T, "eta": self.eta.tolist(), "alpha": self.alpha.tolist(), "kappa": self.kappa}


@dataclass(frozen=True)
class TextSchedule:
    """Cumulative retention ``alphabar`` (length T+1) of the uniform-noise categorical chain."""

    T: int
    K: int
    alpha: np.ndarray
    alphabar: np.ndarray

    def __post_init__(self):
        if self.K < 2:
            raise ScheduleError("alphabet needs at least two symbols")
        if self.alphabar.shape != (self.T + 1,) or self.alpha.shape != (self.T,):
            raise ScheduleError("alphabar must have T+1 entries and alpha T entries")
        if self.alphabar[0] != 1.0:
            raise ScheduleError("alphabar_0 must be exactly 1")
        if np.any(np.diff(self.alphabar) >= 0):
            raise ScheduleError("alphabar must be strictly decreasing")
        if self.alphabar[-1] > 0.05:
            raise ScheduleError("alphabar_T must be at most 0.05")
        if np.any(self.alpha <= 0) or np.any(self.alpha > 1):
            raise ScheduleError("per-step alpha must lie in (0, 1]")
        self.alpha.setflags(write=False)
        self.alphabar.setflags(write=False)

    def to_dict(self) -> dict:
        return {"T": self.T, "K": self.K, "alpha_txt": self.alpha.tolist(), "alphabar_txt": self.alphabar.tolist()}


def make_shift_schedule(T: int = 18, eta_1: float = 0.001, eta_T: float = 0.999, kappa: float = 2.0) -> ShiftSchedule:
    """Geometric interpolation ``eta_t = eta_1 * (eta_T / eta_1) ** ((t-1)/(T-1))``.

    For T=1 the single step jumps straight to ``eta_T``.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ScheduleError(f"T must be a positive integer, got {T!r}")
    if not 0 < eta_1 < eta_T <= 1:
        raise ScheduleError(f"need 0 < eta_1 < eta_T <= 1, got eta_1={eta_1}, eta_T={eta_T}")
    if not kappa > 0:
        raise ScheduleError(f"kappa must be positive, got {kappa}")
    if T >= 2 and (eta_1 > 0.01 or eta_T < 0.99):
        raise ScheduleError("endpoints must satisfy eta_1 <= 0.01 and eta_T >= 0.99")
    eta = np.zeros(T + 1)
    if T == 1:
        eta[1] = eta_T
    else:
        t = np.arange(1, T + 1)
        eta[1:] = eta_1 * (eta_T / eta_1) ** ((t - 1) / (T - 1))
        eta[T] = eta_T
    return ShiftSchedule(T=int(T), eta=eta, alpha=eta[1:] - eta[:-1], kappa=float(kappa))


def make_text_schedule(T: int = 18, K: int = 16, final_alphabar: float = 0.01) -> TextSchedule:
    """Cosine retention ``cos^2(pi/2 * t/T)`` affinely rescaled to end at ``final_alphabar``."""
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ScheduleError(f"T must be a positive integer, got {T!r}")
    if not isinstance(K, (int, np.integer)) or K < 2:
        raise ScheduleError(f"K must be an integer >= 2, got {K!r}")
    if not 0 < final_alphabar < 1:
        raise ScheduleError(f"final_alphabar must lie in (0, 1), got {final_alphabar}")
    t = np.arange(T + 1)
    alphabar = final_alphabar + (1.0 - final_alphabar) * np.cos(0.5 * np.pi * t / T) ** 2
    alphabar[0] = 1.0
    alphabar[T] = final_alphabar
    alpha = alphabar[1:] / alphabar[:-1]
    return TextSchedule(T=int(T), K=int(K), alpha=alpha, alphabar=alphabar)
