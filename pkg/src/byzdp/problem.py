"""Objective families with exact gradients and stochastic oracles.

Every problem exposes the same small surface used by the optimizers:

* ``G`` honest clients (plus, for data poisoning, extra poisoned clients)
* ``grads(x)``: exact local gradients of the protocol-following clients, one row each
* ``stoch_grads(x, streams, t)``: noisy versions drawn on the ``minibatch`` streams
* ``f(x)``, ``full_grad(x)`` and ``f_star`` for the honest average objective
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax

from .attack import flip_labels
from .core import Streams, row_norms


@dataclass
class QuadraticProblem:
    """f_i(x) = 1/2 (x - b_i)^T A (x - b_i), shared curvature ``A``, per-client shifts ``b``.

    The stochastic oracle adds N(0, sigma_noise^2 I) to the exact gradient.
    """

    A: np.ndarray
    b: np.ndarray
    sigma_noise: float = 0.0
    _L: float = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.b = np.atleast_2d(np.asarray(self.b, dtype=np.float64))
        if self.A.shape[0] != self.A.shape[1] or not np.allclose(self.A, self.A.T):
            raise ValueError("A must be a symmetric square matrix")
        if self.b.shape[1] != self.A.shape[0]:
            raise ValueError("shift vectors must match the dimension of A")
        eig = np.linalg.eigvalsh(self.A)
        if eig[0] < -1e-12 * max(1.0, abs(eig[-1])):
            raise ValueError("A must be positive semidefinite")
        self._L = float(eig[-1])

    G = property(lambda self: self.b.shape[0])
    d = property(lambda self: self.A.shape[0])
    num_workers = G
    finite_sum = False

    @property
    def L(self) -> float:
        return self._L

    @property
    def x_star(self) -> np.ndarray:
        return self.b.mean(axis=0)

    @property
    def f_star(self) -> float:
        return self.f(self.x_star)

    def f_i(self, i, x) -> float:
        r = x - self.b[i]
        return 0.5 * float(r @ self.A @ r)

    def f(self, x) -> float:
        R = x[None, :] - self.b
        return 0.5 * float(np.einsum("ij,jk,ik->", R, self.A, R)) / self.G

    def exact_grad(self, i, x) -> np.ndarray:
        return self.A @ (x - self.b[i])

    def grads(self, x) -> np.ndarray:
        return (x[None, :] - self.b) @ self.A

    def full_grad(self, x) -> np.ndarray:
        return self.A @ (x - self.b.mean(axis=0))

    def stoch_grad(self, i, x, streams: Streams, t: int) -> np.ndarray:
        g = self.exact_grad(i, x)
        if self.sigma_noise == 0:
            return g
        return g + self.sigma_noise * streams.get(i, "minibatch", t).standard_normal(self.d)

    def stoch_grads(self, x, streams: Streams, t: int) -> np.ndarray:
        G = self.grads(x)
        if self.sigma_noise == 0:
            return G
        noise = np.stack([streams.get(i, "minibatch", t).standard_normal(self.d) for i in range(self.G)])
        return G + self.sigma_noise * noise


def make_quadratic(G: int, d: int, zeta_target: float, L: float, mu: float, rng: np.random.Generator,
                   sigma_noise: float = 0.0, center_scale: float = 1.0) -> QuadraticProblem:
    """Random quadratic with spectrum in [mu, L] and gradient dissimilarity exactly ``zeta_target``.

    The eigenvalues are evenly spaced over [mu, L] in a random orthonormal
    basis. Shifts are a common random centre plus zero-mean offsets rescaled
    so that max_i ||A (mean(b) - b_i)|| equals ``zeta_target``.
    """
    if not (L >= mu > 0):
        raise ValueError("need L >= mu > 0")
    if zeta_target < 0:
        raise ValueError("zeta_target must be >= 0")
    if zeta_target > 0 and G < 2:
        raise ValueError("a single client cannot have positive dissimilarity")
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eig = np.array([L]) if d == 1 else np.linspace(mu, L, d)
    A = (Q * eig) @ Q.T
    A = 0.5 * (A + A.T)
    center = center_scale * rng.standard_normal(d)
    offsets = rng.standard_normal((G, d))
    offsets -= offsets.mean(axis=0)
    if zeta_target == 0:
        offsets[:] = 0.0
    else:
        offsets *= zeta_target / row_norms(offsets @ A).max()
    return QuadraticProblem(A, center[None, :] + offsets, sigma_noise)


def measure_zeta(problem, x) -> tuple[float, float]:
    """Max and root-mean-square distance of the local gradients from the global one."""
    Gr = problem.grads(x)[: problem.G]
    dev = row_norms(Gr - Gr.mean(axis=0))
    return float(dev.max()), float(math.sqrt(float((dev**2).mean())))


def smoothness_witness(problem, rng: np.random.Generator, pairs: int = 100, scale: float = 1.0) -> float:
    """Largest observed ||grad f_i(x) - grad f_i(y)|| / ||x - y|| over random pairs and clients."""
    worst = 0.0
    for _ in range(pairs):
        x = scale * rng.standard_normal(problem.d)
        y = scale * rng.standard_normal(problem.d)
        ratio = row_norms(problem.grads(x) - problem.grads(y)) / np.linalg.norm(x - y)
        worst = max(worst, float(ratio.max()))
    return worst


# --- classification -------------------------------------------------------


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


@dataclass
class LogRegProblem:
    """Multinomial logistic regression with per-client finite sums.

    The parameter is the flattened (num_classes, num_features) weight
    matrix. ``shards[:G]`` belong to the honest clients; any further shards
    belong to poisoned clients, which follow the protocol on their own data.
    ``batch`` is the minibatch size of the stochastic oracle (``None`` means
    the full local gradient).
    """

    shards: list
    G: int
    num_classes: int
    reg: float = 0.0
    batch: int | None = None
    f_star: float | None = None

    finite_sum = True

    def __post_init__(self):
        if not (1 <= self.G <= len(self.shards)):
            raise ValueError("G must be between 1 and the number of shards")
        self.num_features = self.shards[0].features.shape[1]

    @property
    def d(self) -> int:
        return self.num_classes * self.num_features

    @property
    def num_workers(self) -> int:
        return len(self.shards)

    @property
    def L(self) -> float:
        # the softmax cross-entropy Hessian in the logits has norm <= 1/2
        sq = max(float((s.features**2).sum(axis=1).max()) for s in self.shards[: self.G])
        return 0.5 * sq + self.reg

    def local_size(self, i) -> int:
        return len(self.shards[i])

    def _logits(self, i, x, idx=None):
        s = self.shards[i]
        Xf = s.features if idx is None else s.features[idx]
        y = s.labels if idx is None else s.labels[idx]
        W = x.reshape(self.num_classes, self.num_features)
        return Xf, y, Xf @ W.T

    def f_i(self, i, x) -> float:
        _, y, Z = self._logits(i, x)
        ce = logsumexp(Z, axis=1) - Z[np.arange(len(y)), y]
        return float(ce.mean()) + 0.5 * self.reg * float(x @ x)

    def f(self, x) -> float:
        return sum(self.f_i(i, x) for i in range(self.G)) / self.G

    def per_example_grads(self, i, x, idx=None) -> np.ndarray:
        Xf, y, Z = self._logits(i, x, idx)
        P = softmax(Z, axis=1)
        P[np.arange(len(y)), y] -= 1.0
        # row j is vec((p_j - e_{y_j}) a_j^T)
        out = (P[:, :, None] * Xf[:, None, :]).reshape(len(y), -1)
        if self.reg:
            out += self.reg * x
        return out

    def exact_grad(self, i, x) -> np.ndarray:
        return self.per_example_grads(i, x).mean(axis=0)

    def grads(self, x) -> np.ndarray:
        return np.stack([self.exact_grad(i, x) for i in range(self.num_workers)])

    def full_grad(self, x) -> np.ndarray:
        return self.grads(x)[: self.G].mean(axis=0)

    def sample(self, i, size, streams: Streams, t: int, purpose="minibatch") -> np.ndarray:
        m = self.local_size(i)
        idx = streams.get(i, purpose, t).choice(m, size=size, replace=False)
        return np.sort(idx)

    def stoch_grad(self, i, x, streams: Streams, t: int) -> np.ndarray:
        if self.batch is None or self.batch >= self.local_size(i):
            return self.exact_grad(i, x)
        return self.per_example_grads(i, x, self.sample(i, self.batch, streams, t)).mean(axis=0)

    def stoch_grads(self, x, streams: Streams, t: int) -> np.ndarray:
        return np.stack([self.stoch_grad(i, x, streams, t) for i in range(self.num_workers)])

    def accuracy(self, x, data: Dataset) -> float:
        W = x.reshape(self.num_classes, self.num_features)
        return float(((data.features @ W.T).argmax(axis=1) == data.labels).mean())

    def solve_f_star(self) -> float:
        """Numerically minimise the honest objective (L-BFGS) and cache f*."""
        from scipy.optimize import minimize

        res = minimize(self.f, np.zeros(self.d), jac=self.full_grad, method="L-BFGS-B",
                       options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 10_000})
        self.f_star = float(res.fun)
        return self.f_star


def make_blobs(num_examples: int, num_features: int, num_classes: int, rng: np.random.Generator,
               separation: float = 2.0) -> Dataset:
    """Gaussian blobs with unit-variance clusters around random class centres."""
    centers = separation * rng.standard_normal((num_classes, num_features))
    labels = rng.integers(0, num_classes, size=num_examples)
    features = centers[labels] + rng.standard_normal((num_examples, num_features))
    return Dataset(features, labels)


def partition_dataset(data: Dataset, G: int, rng: np.random.Generator, scheme: str = "iid_equal") -> list:
    """Shuffle and cut into ``G`` shards whose sizes differ by at most one."""
    if scheme != "iid_equal":
        raise ValueError(f"unsupported partition scheme {scheme!r}")
    if len(data) < G:
        raise ValueError("fewer examples than clients")
    perm = rng.permutation(len(data))
    return [Dataset(data.features[p], data.labels[p]) for p in np.array_split(perm, G)]


def make_logreg(data: Dataset, G: int, byz_count: int, num_classes: int, rng: np.random.Generator,
                reg: float = 0.0, batch: int | None = None, poison: bool = False) -> LogRegProblem:
    """Split ``data`` over ``G + byz_count`` clients; with ``poison`` the last ``byz_count`` shards get flipped labels."""
    parts = partition_dataset(data, G + byz_count, rng)
    shards = parts[:G]
    if poison:
        shards += [Dataset(p.features, flip_labels(p.labels, num_classes)) for p in parts[G:]]
    return LogRegProblem(shards, G, num_classes, reg, batch)


def load_dataset(path, num_features: int | None = None) -> Dataset:
    """Read (features, label) rows.

    ``.csv`` files hold one row per example with the label in the last
    column. Any other file is raw little-endian float64, row-major, with
    ``num_features`` feature columns followed by the label stored as a
    float64 holding an integer value.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
        arr = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    else:
        if num_features is None:
            raise ValueError("binary datasets need num_features")
        arr = np.fromfile(path, dtype="<f8")
        if arr.size % (num_features + 1):
            raise ValueError("file size is not a whole number of rows")
        arr = arr.reshape(-1, num_features + 1)
    labels = arr[:, -1]
    if not np.all(labels == np.round(labels)):
        raise ValueError("labels must be integers")
    return Dataset(arr[:, :-1].copy(), labels.astype(np.int64))


def save_dataset(data: Dataset, path) -> None:
    path = Path(path)
    arr = np.column_stack([data.features, data.labels.astype(np.float64)])
    if path.suffix.lower() == ".csv":
        np.savetxt(path, arr, delimiter=",", fmt="%.17g")
    else:
        arr.astype("<f8").tofile(path)


def exact_grad(problem, i, x) -> np.ndarray:
    return problem.exact_grad(i, np.asarray(x, dtype=np.float64))


def stoch_grad(problem, i, x, streams: Streams, t: int) -> np.ndarray:
    return problem.stoch_grad(i, np.asarray(x, dtype=np.float64), streams, t)
