"""Norm clipping, Gaussian noise and privacy-budget calibration."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import row_norms


@dataclass(frozen=True)
class DPConfig:
    """Local DP setup of a run.

    ``sigma_omega`` is the per-coordinate noise std. Zero disables DP. Use
    :meth:`calibrated` to derive it from an (epsilon, delta) budget.
    """

    epsilon: float
    delta: float
    tau: float
    T: int
    sigma_omega: float = 0.0

    def __post_init__(self):
        if self.sigma_omega < 0 or not math.isfinite(self.sigma_omega):
            raise ValueError("sigma_omega must be finite and >= 0")

    @classmethod
    def calibrated(cls, tau, epsilon, delta, T) -> "DPConfig":
        return cls(epsilon, delta, tau, T, sigma_for_budget(tau, epsilon, delta, T))

    @classmethod
    def disabled(cls) -> "DPConfig":
        return cls(math.inf, 0.0, math.inf, 0, 0.0)

    @property
    def enabled(self) -> bool:
        return self.sigma_omega > 0


def clip(x, tau: float) -> np.ndarray:
    """Scale ``x`` down to norm ``tau`` if it is longer, else return it unchanged."""
    if not tau > 0:
        raise ValueError(f"clipping threshold must be positive, got {tau}")
    x = np.asarray(x, dtype=np.float64)
    nrm = math.sqrt(float(np.dot(x, x)))
    if nrm <= tau:
        return x
    return (tau / nrm) * x


def clip_rows(X: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Clip every row of ``X``; also return the mask of rows that were scaled.

    Rows already within ``tau`` are returned bit-for-bit, and with
    ``tau = inf`` the input array itself is returned.
    """
    if not tau > 0:
        raise ValueError(f"clipping threshold must be positive, got {tau}")
    if math.isinf(tau):
        return X, np.zeros(X.shape[0], dtype=bool)
    norms = row_norms(X)
    active = norms > tau
    if not active.any():
        return X, active
    out = X.copy()
    out[active] *= (tau / norms[active])[:, None]
    return out, active


def gaussian_noise(d: int, sigma: float, rng: np.random.Generator | None) -> np.ndarray:
    """Draw ``d`` i.i.d. N(0, sigma^2) values. ``sigma == 0`` touches no generator."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return np.zeros(d)
    return sigma * rng.standard_normal(d)


def _check_budget(tau, epsilon, delta, T):
    if not (0 < epsilon <= 1):
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if not (0 < delta < 1):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not (tau > 0 and math.isfinite(tau)):
        raise ValueError(f"tau must be finite and positive, got {tau}")
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")


def per_step_budget(epsilon: float, delta: float, T: int) -> tuple[float, float]:
    """Per-iteration (epsilon, delta) whose T-fold advanced composition fits the total."""
    return epsilon / (2.0 * math.sqrt(2.0 * T * math.log(1.0 / delta))), delta / T


def gaussian_mechanism_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
    """Noise std of the classic Gaussian mechanism, c * sensitivity / epsilon with c^2 = 2 ln(1.25/delta)."""
    return math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity / epsilon


def sigma_for_budget(tau: float, epsilon: float, delta: float, T: int) -> float:
    """Noise std making all ``T`` iterations (epsilon, delta)-locally private.

    Each message is a clipped vector of norm at most ``tau``, so replacing one
    sample moves it by at most ``2 tau``. Every step gets the Gaussian
    mechanism at the per-step budget of :func:`per_step_budget`.
    """
    _check_budget(tau, epsilon, delta, T)
    eps_step, delta_step = per_step_budget(epsilon, delta, T)
    return gaussian_mechanism_sigma(2.0 * tau, eps_step, delta_step)


def sigma_heuristic(tau: float, epsilon: float, delta: float, T: int) -> float:
    """The (tau/epsilon) sqrt(T ln(1/delta)) noise level used in the MNIST experiments."""
    if not (epsilon > 0 and 0 < delta < 1 and tau > 0 and T >= 1):
        raise ValueError("invalid budget")
    return tau / epsilon * math.sqrt(T * math.log(1.0 / delta))


def sigma_amplified(tau: float, epsilon: float, delta: float, T: int, batch: int, num_examples: int) -> float:
    """Heuristic noise level scaled by the sampling ratio ``batch / num_examples``."""
    if not (1 <= batch <= num_examples):
        raise ValueError("need 1 <= batch <= num_examples")
    return (batch / num_examples) * sigma_heuristic(tau, epsilon, delta, T)


def advanced_composition(eps_step: float, delta_step: float, T: int, delta_prime: float) -> tuple[float, float]:
    """Total (epsilon, delta) of ``T`` adaptive runs of an (eps_step, delta_step) mechanism."""
    if T == 0:
        return 0.0, delta_prime
    eps_total = math.sqrt(2.0 * T * math.log(1.0 / delta_prime)) * eps_step + T * eps_step * math.expm1(eps_step)
    return eps_total, T * delta_step + delta_prime


def composed_budget(tau: float, epsilon: float, delta: float, T: int) -> tuple[float, float]:
    """Recompose the per-step budget behind :func:`sigma_for_budget` over ``T`` steps.

    Uses delta' = delta, so the total delta is 2 * delta.
    """
    eps_step, delta_step = per_step_budget(epsilon, delta, T)
    return advanced_composition(eps_step, delta_step, T, delta)


def verify_clip_lemma(x, tau: float) -> bool:
    x = np.asarray(x, dtype=np.float64)
    nrm = math.sqrt(float(np.dot(x, x)))
    diff = clip(x, tau) - x
    lhs = math.sqrt(float(np.dot(diff, diff)))
    # rounding slack: a few ulps of ||x||
    return lhs <= max(nrm - tau, 0.0) + 4 * np.finfo(float).eps * nrm
