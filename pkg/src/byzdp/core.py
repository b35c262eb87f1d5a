"""Shared vector helpers, simulation state and keyed random streams.

Vectors are plain 1-d float64 numpy arrays. Per-client buffers are kept
stacked as 2-d arrays (one row per client) so a simulation step can update
every client with a handful of vectorised operations.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PURPOSES = ("minibatch", "dp_noise", "subsample", "attack", "init", "data")


class NumericAbort(FloatingPointError):
    """Raised when a non-finite value shows up in the simulation state.

    ``step`` is the iteration index at which it happened and ``dump`` holds
    the offending state, for post-mortem inspection.
    """

    def __init__(self, step, message, dump=None, partial=None):
        super().__init__(f"non-finite value at step {step}: {message}")
        self.step = step
        self.dump = dump or {}
        # partial RunTrace, attached by the harness
        self.partial = partial


def as_vector(x, d=None) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    if d is not None and v.shape[0] != d:
        raise ValueError(f"expected dimension {d}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def axpy(a: float, x, y) -> np.ndarray:
    """Return ``a * x + y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return a * x + y


def norm2(x) -> float:
    return float(np.sqrt(np.dot(x, x)))


def row_norms(X: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", X, X))


def check_finite(step: int, **arrays) -> None:
    for name, arr in arrays.items():
        if arr is not None and not np.all(np.isfinite(arr)):
            raise NumericAbort(step, name, dump={k: np.array(v, copy=True) for k, v in arrays.items() if v is not None})


@dataclass
class ClientState:
    """Buffers of the clients that run the protocol, stacked by row.

    ``v`` is the client momentum and ``g`` the error-feedback shift. Both
    start at zero.
    """

    v: np.ndarray
    g: np.ndarray

    @classmethod
    def zeros(cls, num_clients: int, d: int) -> "ClientState":
        return cls(np.zeros((num_clients, d)), np.zeros((num_clients, d)))


@dataclass
class ServerState:
    """Global iterate, per-slot server momenta and the current aggregate.

    ``omega_sum`` accumulates the DP noise drawn by each honest client; it is
    bookkeeping only and never feeds back into the iteration.
    """

    x: np.ndarray
    m: np.ndarray
    g: np.ndarray
    omega_sum: np.ndarray

    @classmethod
    def initial(cls, x0, n: int, num_honest: int) -> "ServerState":
        x0 = as_vector(x0)
        d = x0.shape[0]
        return cls(x0.copy(), np.zeros((n, d)), np.zeros(d), np.zeros((num_honest, d)))

    @property
    def n(self) -> int:
        return self.m.shape[0]


@dataclass(frozen=True)
class RngStream:
    """Identifier of one random stream: (seed, client, purpose, iteration)."""

    seed: int
    client: int
    purpose: str
    iteration: int

    def generator(self) -> np.random.Generator:
        return np.random.Generator(
            np.random.Philox(key=_stream_key(self.seed, self.client, self.purpose), counter=_counter(self.iteration))
        )


def _stream_key(seed: int, client: int, purpose: str) -> np.ndarray:
    if purpose not in PURPOSES:
        raise ValueError(f"unknown stream purpose {purpose!r}")
    if client < 0:
        raise ValueError("client index must be non-negative")
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(client), PURPOSES.index(purpose)))
    return ss.generate_state(2, dtype=np.uint64)


def _counter(iteration: int) -> np.ndarray:
    # the low words count blocks inside one draw; the iteration sits above them
    return np.array([0, 0, int(iteration), 0], dtype=np.uint64)


@dataclass
class Streams:
    """Factory for keyed random streams of one run.

    ``get(client, purpose, t)`` returns a generator whose draws depend only
    on ``(seed, client, purpose, t)``. Generators are cached per
    ``(client, purpose)`` and rewound on every call, so a returned generator
    is only valid until the next ``get`` with the same client and purpose.
    Not thread-safe; give each worker its own instance.
    """

    seed: int
    _cache: dict = field(default_factory=dict, repr=False)

    def get(self, client: int, purpose: str, t: int) -> np.random.Generator:
        entry = self._cache.get((client, purpose))
        if entry is None:
            key = _stream_key(self.seed, client, purpose)
            gen = np.random.Generator(np.random.Philox(key=key))
            entry = (gen, key)
            self._cache[(client, purpose)] = entry
        gen, key = entry
        gen.bit_generator.state = {
            "bit_generator": "Philox",
            "state": {"counter": _counter(t), "key": key},
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return gen

    def stream(self, client: int, purpose: str, t: int) -> RngStream:
        return RngStream(self.seed, client, purpose, t)
