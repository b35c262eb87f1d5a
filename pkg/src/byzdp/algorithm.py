"""One-round state transitions of the simulated optimizers.

Every ``step_*`` function takes the state at iteration ``t`` and returns the
state at ``t + 1`` together with a :class:`StepRecord` describing iterate
``x^t``. Inputs are never mutated.

Client rows ``0..G-1`` are honest. When the attack is data-level (label
flipping) the problem carries extra poisoned workers that run the honest
protocol on their own data and fill the Byzantine slots; otherwise the
Byzantine slots receive the colluding attack vector.

Random draws use the keyed streams ``(client, purpose, t + 1)``, so two
algorithms that consume the same purposes see the same noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .aggregation import AggregatorSpec, aggregate
from .attack import AttackSpec, byzantine_message
from .core import ClientState, ServerState, Streams, check_finite, row_norms
from .privacy import DPConfig, clip_rows

ALGORITHMS = ("byz_clip21_sgd2m", "byz_clip_sgd", "safe_dshb", "no_dp", "plus")


@dataclass(frozen=True)
class HyperParams:
    """``tau`` is the (outer) clipping threshold, ``tau_inner`` the per-example one of
    the sub-sampled variant and ``batch`` its sample size."""

    gamma: float
    beta: float = 0.1
    beta_hat: float = 0.01
    tau: float = math.inf
    tau_inner: float = math.inf
    batch: int = 1

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        if not 0 < self.beta_hat <= 1:
            raise ValueError("beta_hat must lie in (0, 1]")
        if not (self.tau > 0 and self.tau_inner > 0):
            raise ValueError("clipping thresholds must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")

    @classmethod
    def no_dp(cls, gamma: float, beta: float = 0.1) -> "HyperParams":
        return cls(gamma, beta, 1.0, math.inf)


@dataclass(frozen=True)
class StepRecord:
    t: int
    grad_norm_sq: float
    f_gap: float | None = None
    lyapunov: float | None = None
    clip_active_frac: float = 0.0


def _record(t, server, clients, problem, hp, lyapunov_eta, clip_frac):
    grad = problem.full_grad(server.x)
    f_star = problem.f_star
    f_gap = None if f_star is None else problem.f(server.x) - f_star
    lyap = None
    if lyapunov_eta is not None and clients is not None:
        lyap = lyapunov(server, clients, problem, hp, lyapunov_eta)
    return StepRecord(t, float(grad @ grad), f_gap, lyap, clip_frac)


def _byzantine_rows(attack: AttackSpec, honest_msgs, n_slots, streams, t):
    if n_slots == 0:
        return np.zeros((0, honest_msgs.shape[1]))
    rng = streams.get(0, "attack", t) if attack.kind == "random_gaussian" else None
    msg = byzantine_message(attack, honest_msgs, rng)
    return np.repeat(msg[None, :], n_slots, axis=0)


def _wire(attack, own_msgs, G, n, streams, t):
    """Messages of all ``n`` slots: protocol followers first, then colluding attackers."""
    if own_msgs.shape[0] == n:
        return own_msgs
    return np.vstack([own_msgs, _byzantine_rows(attack, own_msgs[:G], n - own_msgs.shape[0], streams, t)])


def _noise(dp: DPConfig, rows, d, streams, t):
    if dp.sigma_omega == 0:
        return np.zeros((rows, d))
    return dp.sigma_omega * np.stack([streams.get(i, "dp_noise", t).standard_normal(d) for i in range(rows)])


def _ef_pipeline(t, server, clients, v_new, hp, dp, problem, attack, agg, streams, noise_on_message=True):
    """Shared outer half of the double-momentum methods: clip the shift
    residual, update shifts, noise the message, accumulate server momenta and aggregate."""
    G = problem.G
    tau = hp.tau
    clipped, active = clip_rows(v_new - clients.g, tau)
    g_clients = clients.g + hp.beta_hat * clipped
    if noise_on_message:
        omega = _noise(dp, clipped.shape[0], clipped.shape[1], streams, t + 1)
        c = clipped + omega
    else:
        omega = None
        c = clipped
    C = _wire(attack, c, G, server.n, streams, t + 1)
    m = server.m + hp.beta_hat * C
    g = aggregate(agg, m)
    omega_sum = server.omega_sum if omega is None else server.omega_sum + omega[:G]
    return ServerState(server.x, m, g, omega_sum), ClientState(v_new, g_clients), float(active[:G].mean())


def step_byz_clip21_sgd2m(server: ServerState, clients: ClientState, hp: HyperParams, dp: DPConfig, problem,
                          attack: AttackSpec, agg: AggregatorSpec, streams: Streams, t: int,
                          lyapunov_eta: float | None = None):
    x = server.x - hp.gamma * server.g
    grads = problem.stoch_grads(x, streams, t + 1)
    v = (1 - hp.beta) * clients.v + hp.beta * grads
    new_server, new_clients, frac = _ef_pipeline(
        t, replace(server, x=x), clients, v, hp, dp, problem, attack, agg, streams)
    record = _record(t, server, clients, problem, hp, lyapunov_eta, frac)
    check_finite(t, x=x, v=v, m=new_server.m, g=new_server.g)
    return new_server, new_clients, record


def step_plus(server: ServerState, clients: ClientState, hp: HyperParams, dp: DPConfig, problem,
              attack: AttackSpec, agg: AggregatorSpec, streams: Streams, t: int,
              lyapunov_eta: float | None = None):
    """Sub-sampled variant: per-example clipping at ``tau_inner`` over a random
    batch, DP noise inside the client momentum, outer clipping at ``tau``."""
    if not getattr(problem, "finite_sum", False):
        raise ValueError("the sub-sampled variant needs a finite-sum problem")
    x = server.x - hp.gamma * server.g
    W = problem.num_workers
    d = x.shape[0]
    u = np.empty((W, d))
    for i in range(W):
        idx = problem.sample(i, min(hp.batch, problem.local_size(i)), streams, t + 1, purpose="subsample")
        per_ex, _ = clip_rows(problem.per_example_grads(i, x, idx), hp.tau_inner)
        u[i] = per_ex.mean(axis=0)
    omega = _noise(dp, W, d, streams, t + 1)
    v = (1 - hp.beta) * clients.v + hp.beta * (u + omega)
    new_server, new_clients, frac = _ef_pipeline(
        t, replace(server, x=x, omega_sum=server.omega_sum + omega[: problem.G]), clients, v, hp, dp, problem,
        attack, agg, streams, noise_on_message=False)
    record = _record(t, server, clients, problem, hp, lyapunov_eta, frac)
    check_finite(t, x=x, v=v, m=new_server.m, g=new_server.g)
    return new_server, new_clients, record


def step_byz_clip_sgd(server: ServerState, clients: ClientState, hp: HyperParams, dp: DPConfig, problem,
                      attack: AttackSpec, agg: AggregatorSpec, streams: Streams, t: int,
                      lyapunov_eta: float | None = None):
    """Clipped noisy gradients, aggregated robustly. Clients keep no state."""
    x = server.x - hp.gamma * server.g
    grads = problem.stoch_grads(x, streams, t + 1)
    clipped, active = clip_rows(grads, hp.tau)
    msgs = clipped + _noise(dp, clipped.shape[0], x.shape[0], streams, t + 1)
    M = _wire(attack, msgs, problem.G, server.n, streams, t + 1)
    g = aggregate(agg, M)
    record = _record(t, server, None, problem, hp, None, float(active[: problem.G].mean()))
    check_finite(t, x=x, m=M, g=g)
    return ServerState(x, M, g, server.omega_sum), clients, record


def step_safe_dshb(server: ServerState, clients: ClientState, hp: HyperParams, dp: DPConfig, problem,
                   attack: AttackSpec, agg: AggregatorSpec, streams: Streams, t: int,
                   lyapunov_eta: float | None = None):
    """Heavy-ball momentum over clipped noisy gradients; the momentum lives in ``clients.v``."""
    x = server.x - hp.gamma * server.g
    grads = problem.stoch_grads(x, streams, t + 1)
    clipped, active = clip_rows(grads, hp.tau)
    noisy = clipped + _noise(dp, clipped.shape[0], x.shape[0], streams, t + 1)
    mom = (1 - hp.beta) * clients.v + hp.beta * noisy
    M = _wire(attack, mom, problem.G, server.n, streams, t + 1)
    g = aggregate(agg, M)
    record = _record(t, server, None, problem, hp, None, float(active[: problem.G].mean()))
    check_finite(t, x=x, m=M, g=g)
    return ServerState(x, M, g, server.omega_sum), ClientState(mom, clients.g), record


def step_no_dp(server: ServerState, clients: ClientState, hp: HyperParams, dp: DPConfig, problem,
               attack: AttackSpec, agg: AggregatorSpec, streams: Streams, t: int,
               lyapunov_eta: float | None = None):
    """Client momentum sent as is and aggregated robustly; no clipping, no shifts, no DP."""
    if not (math.isinf(hp.tau) and hp.beta_hat == 1):
        raise ValueError("the no-DP method runs with tau = inf and beta_hat = 1")
    if dp.sigma_omega != 0:
        raise ValueError("the no-DP method cannot add DP noise")
    x = server.x - hp.gamma * server.g
    grads = problem.stoch_grads(x, streams, t + 1)
    v = (1 - hp.beta) * clients.v + hp.beta * grads
    V = _wire(attack, v, problem.G, server.n, streams, t + 1)
    g = aggregate(agg, V)
    record = _record(t, server, None, problem, hp, None, 0.0)
    check_finite(t, x=x, v=V, g=g)
    return ServerState(x, V, g, server.omega_sum), ClientState(v, clients.g), record


STEPS = {
    "byz_clip21_sgd2m": step_byz_clip21_sgd2m,
    "byz_clip_sgd": step_byz_clip_sgd,
    "safe_dshb": step_safe_dshb,
    "no_dp": step_no_dp,
    "plus": step_plus,
}


def lyapunov(server: ServerState, clients: ClientState, problem, hp: HyperParams, eta: float,
             with_flag: bool = False):
    """Optimality gap plus the weighted tracking errors of the client buffers.

    Weights: 8 gamma beta / (beta_hat^2 eta^2) on the momentum error,
    2 gamma / (beta_hat eta) on the shift error and 2 gamma / beta on the
    averaged momentum error. When f* is unknown the gap term is replaced by
    f(x) and, with ``with_flag``, a True flag is returned alongside.
    """
    G = problem.G
    x = server.x
    grads = problem.grads(x)[:G]
    v = clients.v[:G]
    g = clients.g[:G]
    f_star = problem.f_star
    shifted = f_star is None
    gap = problem.f(x) - (0.0 if shifted else f_star)
    track_v = float((row_norms(v - grads) ** 2).mean())
    track_g = float((row_norms(g - v) ** 2).mean())
    avg = v.mean(axis=0) - grads.mean(axis=0)
    gam, b, bh = hp.gamma, hp.beta, hp.beta_hat
    with np.errstate(divide="ignore", invalid="ignore"):
        w_v = 8 * gam * b / (bh**2 * eta**2)
        w_g = 2 * gam / (bh * eta)
        w_avg = 2 * gam / b if b > 0 else math.inf
    # 0 * inf is treated as 0: a vanishing error contributes nothing
    terms = [gap]
    for w, e in ((w_v, track_v), (w_g, track_g), (w_avg, float(avg @ avg))):
        terms.append(0.0 if e == 0 else w * e)
    value = float(sum(terms))
    return (value, shifted) if with_flag else value


def eta_from_state(tau: float, problem, x0) -> float:
    """tau / max(max_i ||grad f_i(x0)||, 3 tau), clipped to (0, 1]; 1/3 for tau = inf."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    if math.isinf(tau):
        return 1.0 / 3.0
    b_init = float(row_norms(problem.grads(np.asarray(x0, dtype=np.float64))[: problem.G]).max())
    return min(1.0, tau / max(b_init, 3 * tau))
