"""Numerical checks of the round-level identities and drift/bias bounds.

The checks work from recorded per-step gradients (see
:class:`~mimefl.algorithms.RoundTrace`) rather than from closed forms, so
they apply to any loss family.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .algorithms import AlgoConfig, RoundTrace, ServerRoundState, run_round
from .base_opt import lipschitz_bound, u_step
from .core import ContractViolation, RngStream
from .problems import (
    ClientPopulation,
    QuadraticPopulation,
    estimate_delta,
    estimate_sigma,
    gradient_dissimilarity,
)


@dataclass
class ReductionReport:
    e_t: np.ndarray
    c_t: np.ndarray
    surrogate_x: np.ndarray
    round_x: np.ndarray
    max_abs_deviation: float
    eta_tilde: float
    trace: RoundTrace


@dataclass
class DriftTrace:
    distances: np.ndarray  # (clients, K): |y_{i,k-1} - x|^2 for k = 1..K
    eps_K: float
    bound_rhs: float
    eta_tilde: float
    applicable: bool  # eta_tilde <= 1 / (2 L B)


def _check_alignment(cfg: AlgoConfig, pop: ClientPopulation) -> None:
    """Refuse configurations whose local steps don't cover whole epochs."""
    B = cfg.batch_size
    steps = set()
    for c in pop.clients:
        if B is None or B >= c.n:
            steps.add(cfg.K)
            continue
        if c.n % B:
            raise ContractViolation(
                f"misaligned batching: client {c.id} has n={c.n} not divisible by batch_size={B}"
            )
        per_epoch = c.n // B
        k = cfg.K * per_epoch if cfg.local_mode == "epochs" else cfg.K
        if k % per_epoch:
            raise ContractViolation(
                f"misaligned batching: {k} steps is not a whole number of epochs for client {c.id}"
            )
        steps.add(k)
    if len(steps) > 1:
        raise ContractViolation("misaligned batching: clients take different numbers of local steps")


def reduction_oracle(cfg: AlgoConfig, st: ServerRoundState, pop: ClientPopulation, rng: RngStream) -> ReductionReport:
    """Compare a Mime/MimeLite round with its centralized surrogate.

    The surrogate is ``x - K eta u(c_t + e_t, s)``, where c_t is the cohort
    mean full gradient at x and e_t averages grad f_i(y_{k-1}; batch) -
    grad f_i(x; batch) over clients and steps.
    """
    if cfg.algorithm not in ("Mime", "MimeLite"):
        raise ContractViolation("the reduction identity covers Mime and MimeLite only")
    _check_alignment(cfg, pop)
    plain_state, _ = run_round(cfg, st, pop, rng)
    _, traced = run_round(cfg, st, pop, rng, trace=True)
    tr = traced.trace
    w = np.array([ct.weight for ct in tr.clients])
    w = w / w.sum()
    steps = len(tr.clients[0].grad_y) if tr.clients else 0
    if steps == 0:
        e_t = np.zeros_like(st.x)
    else:
        per_client = np.array([np.sum(np.array(ct.grad_y) - np.array(ct.grad_x), axis=0) / steps
                               for ct in tr.clients])
        e_t = w @ per_client
    if cfg.algorithm == "Mime":
        c_t = tr.c
    else:
        c_t = w @ np.array([ct.full_grad_x for ct in tr.clients])
    eta_tilde = steps * cfg.eta
    surrogate = st.x - eta_tilde * u_step(cfg.base, c_t + e_t, st.s)
    dev = float(np.max(np.abs(surrogate - plain_state.x)))
    return ReductionReport(e_t, c_t, surrogate, plain_state.x, dev, eta_tilde, tr)


def drift_trace(trace: RoundTrace, L: float, B: float | None = None) -> DriftTrace:
    """Client drift of a traced round and the matching lemma bound.

    Mime:     eps_K <= 18 eta~^2 |u(c, s)|^2
    MimeLite: eps_K <= 18 eta~^2 mean_i |u(grad f_i(x), s)|^2
    For bases with u(0, s) = 0 these are the textbook bounds with
    ``B^2 |c|^2`` (resp. ``B^2 |grad f_i(x)|^2``) on the right; the
    state-aware form also covers momentum states. The bounds hold when
    ``eta~ = K eta <= 1 / (2 L B)``; MimeLite is checked on full-batch
    rounds only since its minibatch bound is an expectation.
    """
    B = lipschitz_bound(trace.base) if B is None else B
    K = len(trace.clients[0].y_prev) if trace.clients else 0
    eta_tilde = K * trace.eta
    if K == 0:
        return DriftTrace(np.zeros((len(trace.clients), 0)), 0.0, 0.0, 0.0, True)
    dist = np.array([[float(np.sum((y - trace.x) ** 2)) for y in ct.y_prev] for ct in trace.clients])
    eps = float(dist.mean())
    if trace.algorithm == "Mime":
        u = u_step(trace.base, trace.c, trace.s)
        rhs = 18.0 * eta_tilde**2 * float(u @ u)
        applicable = True
    else:
        us = [u_step(trace.base, ct.full_grad_x, trace.s) for ct in trace.clients]
        rhs = 18.0 * eta_tilde**2 * float(np.mean([u @ u for u in us]))
        applicable = all(b is None for ct in trace.clients for b in ct.batches)
    applicable = applicable and eta_tilde <= 1.0 / (2.0 * L * B)
    return DriftTrace(dist, eps, rhs, eta_tilde, bool(applicable))


def momentum_error(m, x, pop: ClientPopulation) -> float:
    diff = np.asarray(m) - pop.gradient(np.asarray(x, dtype=np.float64))
    return float(diff @ diff)


def _subsets(N: int, S: int, rng: RngStream | None, draws: int = 1000):
    if N <= 8:
        return [list(s) for s in itertools.combinations(range(N), S)]
    gen = (rng or RngStream(0)).generator()
    return [list(gen.choice(N, S, replace=False)) for _ in range(draws)]


def control_variate_moments(pop: ClientPopulation, x, S: int, rng: RngStream | None = None):
    """Mean of the cohort-mean gradient c and of |c - grad f(x)|^2 over cohorts.

    Exact enumeration of all size-S cohorts for N <= 8, Monte Carlo otherwise.
    """
    grads = pop.client_gradients(x)
    full = pop.gradient(x)
    cs = np.array([grads[s].mean(axis=0) for s in _subsets(pop.N, S, rng)])
    return cs.mean(axis=0), float(np.mean(np.sum((cs - full) ** 2, axis=1)))


def bias_probe(pop: ClientPopulation, x, y_map: dict, sampling: str = "mime", S: int = 1,
               rng: RngStream | None = None) -> tuple[float, float]:
    """Left and right side of the local-update bias bounds.

    ``sampling="mime"``: for every client i,
    E_{cohort, sample} |grad f_i(y_i; z) + c(x) - grad f_i(x; z) - grad f(y_i)|^2
    <= 2 delta^2 |y_i - x|^2 + 2 G^2 / S; the pair for the client with the
    smallest slack is returned.

    ``sampling="mimelite"``: E_{i, sample} |grad f_i(y_i; z) - grad f(y_i)|^2
    <= 2 delta^2 E_i |y_i - x|^2 + 2 G^2 + sigma^2.

    G^2 is the gradient dissimilarity at x; delta and sigma^2 are measured on
    the population.
    """
    if not isinstance(pop, QuadraticPopulation):
        raise ContractViolation("bias_probe needs a quadratic population")
    if pop.weighting != "uniform":
        raise ContractViolation("bias_probe assumes uniform client weighting")
    x = np.asarray(x, dtype=np.float64)
    delta = estimate_delta(pop)
    G2 = gradient_dissimilarity(pop, x)
    ys = [np.asarray(y_map.get(i, x), dtype=np.float64) for i in range(pop.N)]

    if sampling == "mime":
        grads_x = pop.client_gradients(x)
        cohorts = np.array([grads_x[s].mean(axis=0) for s in _subsets(pop.N, S, rng)])
        worst = None
        for i, client in enumerate(pop.clients):
            base = client.sample_gradients(ys[i]) - client.sample_gradients(x) - pop.gradient(ys[i])
            # every (cohort, sample) pair
            diff = base[None, :, :] + cohorts[:, None, :]
            lhs = float(np.mean(np.sum(diff**2, axis=2)))
            rhs = 2 * delta**2 * float(np.sum((ys[i] - x) ** 2)) + 2 * G2 / S
            if worst is None or lhs - rhs > worst[0] - worst[1]:
                worst = (lhs, rhs)
        return worst
    if sampling == "mimelite":
        sigma2 = estimate_sigma(pop, [x])
        lhs = float(np.mean([
            np.mean(np.sum((c.sample_gradients(ys[i]) - pop.gradient(ys[i])) ** 2, axis=1))
            for i, c in enumerate(pop.clients)
        ]))
        spread = float(np.mean([np.sum((y - x) ** 2) for y in ys]))
        return lhs, 2 * delta**2 * spread + 2 * G2 + sigma2
    raise ContractViolation(f"unknown sampling {sampling!r}")
