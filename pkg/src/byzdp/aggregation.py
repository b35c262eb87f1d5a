"""Robust aggregation rules, nearest-neighbour mixing and a brute-force robustness certifier."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

KINDS = ("mean", "coordinate_median", "trimmed_mean", "geometric_median")

GM_TOL = 1e-10
GM_MAX_ITER = 10_000


@dataclass(frozen=True)
class AggregatorSpec:
    kind: str = "mean"
    nnm: bool = False
    assumed_byz_count: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown aggregator {self.kind!r}; expected one of {KINDS}")
        if self.assumed_byz_count < 0:
            raise ValueError("assumed_byz_count must be >= 0")

    def validate(self, n: int) -> None:
        if n < 1:
            raise ValueError("need at least one message")
        if n <= 2 * self.assumed_byz_count:
            raise ValueError(f"n={n} must exceed 2*f={2 * self.assumed_byz_count}")


def _stack(msgs) -> np.ndarray:
    X = np.asarray(msgs, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("messages must form a non-empty (n, d) array")
    return X


def aggregate(spec: AggregatorSpec, msgs) -> np.ndarray:
    X = _stack(msgs)
    n = X.shape[0]
    spec.validate(n)
    if spec.nnm:
        X = nnm_mix(X, spec.assumed_byz_count)
    if spec.kind == "mean":
        out = X.mean(axis=0)
    elif spec.kind == "coordinate_median":
        out = coordinate_median(X)
    elif spec.kind == "trimmed_mean":
        out = trimmed_mean(X, spec.assumed_byz_count)
    else:
        out = geometric_median(X).point
    return out


def coordinate_median(msgs) -> np.ndarray:
    # numpy averages the two middle order statistics for even n
    return np.median(_stack(msgs), axis=0)


def trimmed_mean(msgs, f: int) -> np.ndarray:
    X = _stack(msgs)
    n = X.shape[0]
    if n <= 2 * f:
        raise ValueError(f"trimmed mean needs n > 2f, got n={n}, f={f}")
    if f == 0:
        return X.mean(axis=0)
    return np.sort(X, axis=0)[f : n - f].mean(axis=0)


@dataclass
class GeometricMedianResult:
    point: np.ndarray
    iterations: int
    converged: bool


def _gm_objective(X, z):
    return float(np.sqrt(((X - z) ** 2).sum(axis=1)).sum())


def _optimal_data_point(X, eps):
    """Index of an input point that minimises the sum of distances, or None.

    Point k is optimal iff the unit vectors towards it from all other points
    sum to a norm no larger than its multiplicity.
    """
    D = pairwise_distances(X)
    for k in range(X.shape[0]):
        away = D[k] > eps
        U = ((X[k] - X[away]) / D[k, away][:, None]).sum(axis=0)
        if math.sqrt(float(U @ U)) <= (~away).sum():
            return k
    return None


def geometric_median(msgs, tol: float = GM_TOL, max_iter: int = GM_MAX_ITER) -> GeometricMedianResult:
    """Weiszfeld iteration with the Vardi-Zhang fix for iterates sitting on a data point.

    Stops once the iterate moves less than ``tol`` (scaled by the data
    spread). If ``max_iter`` is hit the best iterate seen is returned, a
    warning is emitted and ``converged`` is False.
    """
    X = _stack(msgs)
    n = X.shape[0]
    if n == 1:
        return GeometricMedianResult(X[0].copy(), 0, True)
    if X.shape[1] == 1:
        # on the line the minimiser set contains the median
        return GeometricMedianResult(np.median(X, axis=0), 0, True)
    scale = max(float(np.abs(X - X.mean(axis=0)).max()), 1e-300)
    hit = _optimal_data_point(X, 1e-12 * scale)
    if hit is not None:
        # Weiszfeld only creeps towards an optimum that sits on a data point
        return GeometricMedianResult(X[hit].copy(), 0, True)
    z = X.mean(axis=0)
    best, best_obj = z, _gm_objective(X, z)
    for it in range(1, max_iter + 1):
        diff = X - z
        dist = np.sqrt((diff**2).sum(axis=1))
        at_point = dist <= 1e-12 * scale
        if at_point.all():
            return GeometricMedianResult(z, it, True)
        w = np.zeros(n)
        w[~at_point] = 1.0 / dist[~at_point]
        T = (w[:, None] * X).sum(axis=0) / w.sum()
        if at_point.any():
            # Vardi-Zhang: pull towards T unless the data point itself is optimal
            eta = float(at_point.sum())
            R = (w[:, None] * (X - z)).sum(axis=0)
            r = math.sqrt(float(R @ R))
            lam = 1.0 if r == 0 else min(1.0, eta / r)
            z_new = (1 - lam) * T + lam * z
        else:
            z_new = T
        obj = _gm_objective(X, z_new)
        if obj < best_obj:
            best, best_obj = z_new, obj
        step = math.sqrt(float(((z_new - z) ** 2).sum()))
        z = z_new
        if step <= tol * scale:
            return GeometricMedianResult(best, it, True)
    warnings.warn(f"geometric median did not converge in {max_iter} iterations", RuntimeWarning, stacklevel=2)
    return GeometricMedianResult(best, max_iter, False)


def pairwise_distances(X: np.ndarray) -> np.ndarray:
    # explicit differences keep the result exact for permuted inputs
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


def nnm_mix(msgs, f: int) -> np.ndarray:
    """Replace each vector by the mean of its ``n - f`` nearest vectors, itself included.

    Distance ties are broken by the smaller index.
    """
    X = _stack(msgs)
    n = X.shape[0]
    if not (0 <= f < n):
        raise ValueError(f"need 0 <= f < n, got f={f}, n={n}")
    if f == 0:
        return np.repeat(X.mean(axis=0)[None, :], n, axis=0)
    D = pairwise_distances(X)
    np.fill_diagonal(D, -1.0)
    nbrs = np.argsort(D, axis=1, kind="stable")[:, : n - f]
    return X[nbrs].mean(axis=1)


def certify_robustness(agg: AggregatorSpec, msgs, byz_count: int) -> float:
    """Worst-case robustness coefficient of ``agg`` on this particular input.

    Runs over every index set S of size ``n - byz_count`` and returns the
    largest ratio ||out - mean_S||^2 (n - b) / (delta_byz * sum_S ||x_i - mean_S||^2),
    with delta_byz = b / n. A term with zero numerator counts as 0; a
    positive numerator over zero scatter counts as +inf.
    """
    X = _stack(msgs)
    n = X.shape[0]
    if not (0 < byz_count and 2 * byz_count < n):
        raise ValueError(f"need 0 < byz_count < n/2, got {byz_count} with n={n}")
    if n > 20:
        raise ValueError("certifier is exhaustive; n > 20 is refused")
    out = aggregate(agg, X)
    delta_byz = byz_count / n
    k = n - byz_count
    worst = 0.0
    for S in itertools.combinations(range(n), k):
        XS = X[list(S)]
        mean_S = XS.mean(axis=0)
        num = float(((out - mean_S) ** 2).sum())
        scatter = float(((XS - mean_S) ** 2).sum())
        if num == 0.0:
            term = 0.0
        elif scatter == 0.0:
            term = math.inf
        else:
            term = num * k / (delta_byz * scatter)
        worst = max(worst, term)
    return worst
