"""Round engine for Mime-family algorithms and the usual federated baselines.

Every algorithm runs through :func:`run_round`, which samples clients,
simulates their local work, aggregates in ascending client-id order and
returns the next server state with a :class:`RoundRecord`.

Random streams are addressed per round: label 0 samples the cohort, label 1
holds one child stream per client id for its minibatches, and label 2 draws an
independent cohort for the control variate when requested. Because client
streams are keyed by id, two algorithms run from the same seed see exactly
the same cohorts and minibatches.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Sequence

import numpy as np

from .base_opt import (
    OptimizerSpec,
    OptimizerState,
    init_state,
    lipschitz_bound,
    state_size,
    u_step,
    v_step,
)
from .core import ContractViolation, RngStream, weighted_average
from .problems import Client, ClientPopulation

ALGORITHMS = (
    "Mime",
    "MimeLite",
    "MimeMVR",
    "MimeLiteMVR",
    "FedAvg",
    "Scaffold",
    "FedProx",
    "LocMime",
    "ServerOnly",
)
MIME_FAMILY = ("Mime", "MimeLite", "LocMime")
MVR_FAMILY = ("MimeMVR", "MimeLiteMVR")

SAMPLE_LABEL, CLIENT_LABEL, CONTROL_LABEL = 0, 1, 2


@dataclass(frozen=True)
class AlgoConfig:
    algorithm: str = "Mime"
    base: OptimizerSpec = field(default_factory=OptimizerSpec)
    eta: float = 0.01
    server_lr: float = 1.0
    K: int = 5
    S: int = 5
    a: float = 0.1
    mu_prox: float = 0.0
    weighting: Literal["uniform", "by_n"] = "uniform"
    split_communication: bool = False
    batch_size: int | None = None
    local_mode: Literal["steps", "epochs"] = "steps"
    control_variate_source: Literal["same_sample", "independent_sample"] = "same_sample"
    mvr_anchor: Literal["prev_prev", "prev"] = "prev_prev"
    warmup_rounds: int = 1
    workers: int = 1
    name: str = ""

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ContractViolation(f"unknown algorithm {self.algorithm!r}")
        if not self.eta > 0:
            raise ContractViolation("eta must be positive")
        if self.S < 1:
            raise ContractViolation("S must be at least 1")
        if self.K < 0:
            raise ContractViolation("K must be nonnegative")
        if not 0.0 <= self.a <= 1.0:
            raise ContractViolation("a must lie in [0, 1]")
        if self.mu_prox < 0:
            raise ContractViolation("mu_prox must be nonnegative")
        if self.weighting not in ("uniform", "by_n"):
            raise ContractViolation(f"unknown weighting {self.weighting!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ContractViolation("batch_size must be positive")
        if self.local_mode not in ("steps", "epochs"):
            raise ContractViolation(f"unknown local_mode {self.local_mode!r}")
        if self.control_variate_source not in ("same_sample", "independent_sample"):
            raise ContractViolation(f"unknown control_variate_source {self.control_variate_source!r}")
        if self.mvr_anchor not in ("prev_prev", "prev"):
            raise ContractViolation(f"unknown mvr_anchor {self.mvr_anchor!r}")
        if self.split_communication and (self.algorithm not in MIME_FAMILY or self.S < 2):
            raise ContractViolation("split communication needs a Mime/MimeLite/LocMime run with S >= 2")
        if self.warmup_rounds < 1:
            raise ContractViolation("warmup_rounds must be at least 1")

    @property
    def label(self) -> str:
        return self.name or f"{self.algorithm}{self.base.kind}"


@dataclass(frozen=True)
class ServerRoundState:
    x: np.ndarray
    s: OptimizerState
    t: int = 0
    x_prev: np.ndarray | None = None
    m: np.ndarray | None = None
    c: np.ndarray | None = None
    scaffold_clients: np.ndarray | None = None
    scaffold_server: np.ndarray | None = None


@dataclass
class ClientTrace:
    """Everything one client touched during a traced round."""

    client: int
    weight: float
    batches: list = field(default_factory=list)
    y_prev: list = field(default_factory=list)
    grad_y: list = field(default_factory=list)
    grad_x: list = field(default_factory=list)
    full_grad_x: np.ndarray | None = None
    y_final: np.ndarray | None = None


@dataclass
class RoundTrace:
    algorithm: str
    base: OptimizerSpec
    x: np.ndarray
    s: OptimizerState
    eta: float
    K: int
    c: np.ndarray | None
    clients: list[ClientTrace]
    x_new: np.ndarray | None = None


@dataclass
class RoundRecord:
    t: int
    f_value: float
    grad_norm_sq: float
    drift: float
    momentum_err_sq: float | None
    comm_down: int
    comm_up: int
    wall_ns: int = 0
    trace: RoundTrace | None = None


# ---------------------------------------------------------------------------
# sampling and local batches


def sample_clients(N: int, S: int, rng: RngStream) -> np.ndarray:
    """S distinct client ids, in draw order."""
    if S > N:
        raise ContractViolation(f"cannot sample S={S} clients from N={N}")
    return rng.generator().choice(N, size=S, replace=False)


def local_batches(n: int, K: int, batch_size: int | None, mode: str, gen: np.random.Generator):
    """Index sets for one client's local steps (``None`` means the full batch).

    Minibatches walk through shuffled epochs, so K steps that cover whole
    epochs touch every sample equally often. In ``epochs`` mode K counts
    epochs and the step count is K * ceil(n / batch_size).
    """
    if batch_size is None or batch_size >= n:
        return [None] * K
    per_epoch = math.ceil(n / batch_size)
    steps = K * per_epoch if mode == "epochs" else K
    out = []
    while len(out) < steps:
        perm = gen.permutation(n)
        out.extend(perm[j:j + batch_size] for j in range(0, n, batch_size))
    return out[:steps]


def _client_batches(cfg: AlgoConfig, client: Client, rng: RngStream):
    return local_batches(client.n, cfg.K, cfg.batch_size, cfg.local_mode, rng.generator())


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _weights(cfg: AlgoConfig, pop: ClientPopulation, ids) -> list[float]:
    if cfg.weighting == "uniform":
        return [1.0] * len(ids)
    return [float(pop.clients[i].n) for i in ids]


# ---------------------------------------------------------------------------
# client updates


def mime_client_update(x, s, c, client: Client, K, eta, base, batches, trace: ClientTrace | None = None):
    """K steps of ``y -= eta * u(grad(y) - grad(x) + c, s)`` with s frozen.

    ``batches`` is the list of local index sets (``None`` for full batch);
    ``K`` is implied by its length and kept for signature symmetry.
    Returns the final iterate, the full local gradient at x and the client's
    mean squared distance from x over steps 0..K-1.
    """
    full_x = client.grad(x)
    y = x
    drift = 0.0
    for batch in batches:
        gy = client.grad(y, batch)
        gx = full_x if batch is None else client.grad(x, batch)
        if trace is not None:
            trace.batches.append(batch)
            trace.y_prev.append(y)
            trace.grad_y.append(gy)
            trace.grad_x.append(gx)
        drift += float(np.dot(y - x, y - x))
        y = y - eta * u_step(base, gy - gx + c, s)
    return y, full_x, drift / len(batches) if batches else 0.0


def mimelite_client_update(x, s, client: Client, K, eta, base, batches, trace: ClientTrace | None = None):
    """K steps of ``y -= eta * u(grad(y), s)`` with s frozen."""
    y = x
    drift = 0.0
    for batch in batches:
        gy = client.grad(y, batch)
        if trace is not None:
            trace.batches.append(batch)
            trace.y_prev.append(y)
            trace.grad_y.append(gy)
            trace.grad_x.append(client.grad(x, batch))
        drift += float(np.dot(y - x, y - x))
        y = y - eta * u_step(base, gy, s)
    return y, client.grad(x), drift / len(batches) if batches else 0.0


def loc_mime_client_update(x, s, c, client: Client, K, eta, base, batches):
    """Mime steps, but the client advances its own copy of the optimizer state."""
    full_x = client.grad(x)
    y, s_local = x, s
    drift = 0.0
    for batch in batches:
        gx = full_x if batch is None else client.grad(x, batch)
        g = client.grad(y, batch) - gx + c
        drift += float(np.dot(y - x, y - x))
        y = y - eta * u_step(base, g, s_local)
        s_local = v_step(base, g, s_local)
    return y, full_x, drift / len(batches) if batches else 0.0


def fedprox_client_step(y, x, g, eta, mu_prox):
    return y - eta * (g + mu_prox * (y - x))


def local_sgd(x, client: Client, eta, batches, mu_prox=0.0, correction=None):
    """Plain (optionally proximal / control-variate corrected) local SGD.

    Returns the final iterate, the mean raw gradient over the steps and the
    drift statistic.
    """
    y = x
    drift = 0.0
    grad_sum = np.zeros_like(x)
    for batch in batches:
        g = client.grad(y, batch)
        grad_sum = grad_sum + g
        drift += float(np.dot(y - x, y - x))
        step = g if correction is None else g + correction
        y = fedprox_client_step(y, x, step, eta, mu_prox)
    k = len(batches)
    return y, (grad_sum / k if k else None), drift / k if k else 0.0


def mvr_client_update(x_curr, x_anchor, m, c, client: Client, K, eta, a, batches):
    """K local MVR steps; pass ``c=None`` for the MimeLite variant.

    Mime:     d = a(g_y - g_anchor + c) + (1-a) m + (1-a)(g_y - g_anchor)
    MimeLite: d = a g_y + (1-a) m + (1-a)(g_y - g_anchor)
    with both gradients on the same minibatch.
    """
    y = x_curr
    drift = 0.0
    for batch in batches:
        gy = client.grad(y, batch)
        ga = client.grad(x_anchor, batch)
        if c is None:
            d = a * gy + (1.0 - a) * m + (1.0 - a) * (gy - ga)
        else:
            d = a * (gy - ga + c) + (1.0 - a) * m + (1.0 - a) * (gy - ga)
        drift += float(np.dot(y - x_curr, y - x_curr))
        y = y - eta * d
    return y, drift / len(batches) if batches else 0.0


def mvr_momentum_update(m_prev, grads_curr, grads_prev, a, weights=None):
    """m = a g(x^{t-1}) + (1-a) m + (1-a)(g(x^{t-1}) - g(x^{t-2})), g a cohort mean."""
    if len(grads_curr) != len(grads_prev):
        raise ContractViolation("gradient lists must cover the same clients")
    w = [1.0] * len(grads_curr) if weights is None else weights
    g_curr = weighted_average(grads_curr, w)
    g_prev = weighted_average(grads_prev, w)
    return a * g_curr + (1.0 - a) * m_prev + (1.0 - a) * (g_curr - g_prev)


def warmup_momentum(pop: ClientPopulation, x0, S: int, T0: int, rng: RngStream) -> np.ndarray:
    """Average full gradients at x0 over T0 cohorts of S clients.

    Cohorts are drawn without replacement across warm-up rounds until the
    population is exhausted, then from a fresh permutation; with
    ``T0 * S == N`` the result is the exact population gradient.
    """
    if T0 < 1:
        raise ContractViolation("T0 must be at least 1")
    if S > pop.N:
        raise ContractViolation(f"cannot sample S={S} clients from N={pop.N}")
    gen = rng.generator()
    pool: list[int] = []
    ids: list[int] = []
    for _ in range(T0):
        if len(pool) < S:
            pool = list(gen.permutation(pop.N))
        ids.extend(pool[:S])
        pool = pool[S:]
    grads = [pop.clients[i].grad(x0) for i in ids]
    return weighted_average(grads, [pop.weights[i] for i in ids])


# ---------------------------------------------------------------------------
# communication


def comm_cost(cfg: AlgoConfig, d: int) -> tuple[int, int]:
    """Floats downloaded and uploaded by each participating client."""
    s = state_size(cfg.base, d)
    alg = cfg.algorithm
    if alg in ("Mime", "LocMime"):
        down, up = 2 * d + s, 2 * d
    elif alg == "MimeLite":
        down, up = d + s, 2 * d
    elif alg == "MimeMVR":
        down, up = 4 * d, 3 * d
    elif alg == "MimeLiteMVR":
        down, up = 3 * d, 3 * d
    elif alg == "Scaffold":
        down, up = 2 * d, 2 * d
    else:
        down, up = d, d
    if cfg.split_communication:
        up = d
    return down, up


# ---------------------------------------------------------------------------
# rounds


def init_server_state(cfg: AlgoConfig, pop: ClientPopulation, x0, rng: RngStream | None = None) -> ServerRoundState:
    """Fresh state; MVR runs draw their warm-up cohorts from ``rng``."""
    x0 = np.array(x0, dtype=np.float64)
    st = ServerRoundState(x=x0, s=init_state(cfg.base, pop.dim))
    if cfg.algorithm in MVR_FAMILY:
        if rng is None:
            raise ContractViolation("MVR initialization needs a random stream for warm-up")
        m0 = warmup_momentum(pop, x0, cfg.S, cfg.warmup_rounds, rng)
        st = replace(st, x_prev=x0, m=m0)
    if cfg.algorithm == "Scaffold":
        st = replace(st, scaffold_clients=np.zeros((pop.N, pop.dim)), scaffold_server=np.zeros(pop.dim))
    return st


def _check_state(cfg: AlgoConfig, st: ServerRoundState, pop: ClientPopulation):
    if st.x.shape != (pop.dim,):
        raise ContractViolation("server model dimension does not match population")
    if cfg.algorithm in MVR_FAMILY and (st.m is None or st.x_prev is None):
        raise ContractViolation("MVR state needs m and x_prev")
    if cfg.algorithm == "Scaffold" and st.scaffold_clients is None:
        raise ContractViolation("Scaffold state needs control variates")


def _record(cfg, pop, x_new, t, drift, m_err, n_clients, extra_down=0, extra_up=0) -> RoundRecord:
    down, up = comm_cost(cfg, pop.dim)
    g = pop.gradient(x_new)
    return RoundRecord(
        t=t,
        f_value=pop.loss(x_new),
        grad_norm_sq=float(g @ g),
        drift=drift,
        momentum_err_sq=m_err,
        comm_down=down * n_clients + extra_down,
        comm_up=up * n_clients + extra_up,
    )


def _mime_family_round(cfg, st, pop, rng, trace):
    x, s = st.x, st.s
    ids = sample_clients(pop.N, cfg.S, rng.child(SAMPLE_LABEL))
    extra_down = extra_up = 0
    if cfg.split_communication:
        half = cfg.S // 2
        grad_ids, upd_ids = np.sort(ids[:half]), np.sort(ids[half:])
    else:
        grad_ids = upd_ids = np.sort(ids)
    if cfg.control_variate_source == "independent_sample" and not cfg.split_communication:
        grad_ids = np.sort(sample_clients(pop.N, cfg.S, rng.child(CONTROL_LABEL)))
        extra_down, extra_up = pop.dim * cfg.S, pop.dim * cfg.S
    c = weighted_average([pop.clients[i].grad(x) for i in grad_ids], _weights(cfg, pop, grad_ids))

    weights = _weights(cfg, pop, upd_ids)
    client_rng = rng.child(CLIENT_LABEL)
    traces = [ClientTrace(int(i), w) for i, w in zip(upd_ids, weights)] if trace else None

    def work(j):
        i = upd_ids[j]
        client = pop.clients[i]
        batches = _client_batches(cfg, client, client_rng.child(int(i)))
        tr = traces[j] if traces is not None else None
        if cfg.algorithm == "Mime":
            out = mime_client_update(x, s, c, client, cfg.K, cfg.eta, cfg.base, batches, tr)
        elif cfg.algorithm == "MimeLite":
            out = mimelite_client_update(x, s, client, cfg.K, cfg.eta, cfg.base, batches, tr)
        else:
            out = loc_mime_client_update(x, s, c, client, cfg.K, cfg.eta, cfg.base, batches)
        if tr is not None:
            tr.full_grad_x, tr.y_final = out[1], out[0]
        return out

    results = _map(work, range(len(upd_ids)), cfg.workers)
    x_new = weighted_average([r[0] for r in results], weights)
    s_new = v_step(cfg.base, c, s)
    drift = float(np.mean([r[2] for r in results]))
    rec = _record(cfg, pop, x_new, st.t + 1, drift, None, cfg.S, extra_down, extra_up)
    if trace:
        rec.trace = RoundTrace(cfg.algorithm, cfg.base, x, s, cfg.eta, cfg.K, c, traces, x_new)
    return replace(st, x=x_new, s=s_new, t=st.t + 1, c=c), rec


def _mvr_round(cfg, st, pop, rng, trace):
    x_curr, x_prev, m = st.x, st.x_prev, st.m
    lite = cfg.algorithm == "MimeLiteMVR"
    ids = np.sort(sample_clients(pop.N, cfg.S, rng.child(SAMPLE_LABEL)))
    weights = _weights(cfg, pop, ids)
    extra_down = extra_up = 0
    g_prev = [pop.clients[i].grad(x_prev) for i in ids]
    g_curr = [pop.clients[i].grad(x_curr) for i in ids]
    c = None
    if not lite:
        if cfg.control_variate_source == "independent_sample":
            c_ids = np.sort(sample_clients(pop.N, cfg.S, rng.child(CONTROL_LABEL)))
            c = weighted_average([pop.clients[i].grad(x_prev) for i in c_ids], _weights(cfg, pop, c_ids))
            extra_down, extra_up = pop.dim * cfg.S, pop.dim * cfg.S
        else:
            c = weighted_average(g_prev, weights)
    anchor = x_prev if (not lite and cfg.mvr_anchor == "prev_prev") else x_curr
    client_rng = rng.child(CLIENT_LABEL)

    def work(i):
        client = pop.clients[i]
        batches = _client_batches(cfg, client, client_rng.child(int(i)))
        return mvr_client_update(x_curr, anchor, m, c, client, cfg.K, cfg.eta, cfg.a, batches)

    results = _map(work, list(ids), cfg.workers)
    x_new = weighted_average([r[0] for r in results], weights)
    m_new = mvr_momentum_update(m, g_curr, g_prev, cfg.a, weights)
    err = m_new - pop.gradient(x_curr)
    drift = float(np.mean([r[1] for r in results]))
    rec = _record(cfg, pop, x_new, st.t + 1, drift, float(err @ err), cfg.S, extra_down, extra_up)
    return replace(st, x=x_new, x_prev=x_curr, m=m_new, c=c, t=st.t + 1), rec


def _server_optimizer_round(cfg, st, pop, rng, trace):
    """FedAvg, FedProx and Scaffold: local SGD, then the server optimizer on x - mean(y)."""
    x, s = st.x, st.s
    ids = np.sort(sample_clients(pop.N, cfg.S, rng.child(SAMPLE_LABEL)))
    weights = _weights(cfg, pop, ids)
    client_rng = rng.child(CLIENT_LABEL)
    mu = cfg.mu_prox if cfg.algorithm == "FedProx" else 0.0
    scaffold = cfg.algorithm == "Scaffold"

    def work(i):
        client = pop.clients[i]
        batches = _client_batches(cfg, client, client_rng.child(int(i)))
        corr = st.scaffold_server - st.scaffold_clients[i] if scaffold else None
        return local_sgd(x, client, cfg.eta, batches, mu_prox=mu, correction=corr)

    results = _map(work, list(ids), cfg.workers)
    y_bar = weighted_average([r[0] for r in results], weights)
    pseudo = x - y_bar
    x_new = x - cfg.server_lr * u_step(cfg.base, pseudo, s)
    s_new = v_step(cfg.base, pseudo, s)
    new = replace(st, x=x_new, s=s_new, t=st.t + 1)
    if scaffold:
        c_clients = st.scaffold_clients.copy()
        c_server = st.scaffold_server
        for i, r in zip(ids, results):
            if r[1] is None:
                continue
            c_server = c_server + (r[1] - c_clients[i]) / pop.N
            c_clients[i] = r[1]
        new = replace(new, scaffold_clients=c_clients, scaffold_server=c_server)
    drift = float(np.mean([r[2] for r in results]))
    return new, _record(cfg, pop, x_new, st.t + 1, drift, None, cfg.S)


def _server_only_round(cfg, st, pop, rng, trace):
    ids = np.sort(sample_clients(pop.N, cfg.S, rng.child(SAMPLE_LABEL)))
    c = weighted_average([pop.clients[i].grad(st.x) for i in ids], _weights(cfg, pop, ids))
    x_new = st.x - cfg.eta * u_step(cfg.base, c, st.s)
    s_new = v_step(cfg.base, c, st.s)
    return replace(st, x=x_new, s=s_new, t=st.t + 1, c=c), _record(cfg, pop, x_new, st.t + 1, 0.0, None, cfg.S)


def run_round(cfg: AlgoConfig, st: ServerRoundState, pop: ClientPopulation, rng: RngStream,
              trace: bool = False) -> tuple[ServerRoundState, RoundRecord]:
    """Advance one communication round.

    ``trace=True`` attaches a :class:`RoundTrace` to the record (Mime,
    MimeLite only) for the diagnostics module.
    """
    if cfg.S > pop.N:
        raise ContractViolation(f"cannot sample S={cfg.S} clients from N={pop.N}")
    _check_state(cfg, st, pop)
    if trace and cfg.algorithm not in ("Mime", "MimeLite"):
        raise ContractViolation("tracing is available for Mime and MimeLite rounds only")
    start = time.perf_counter_ns()
    if cfg.algorithm in MIME_FAMILY:
        out = _mime_family_round(cfg, st, pop, rng, trace)
    elif cfg.algorithm in MVR_FAMILY:
        out = _mvr_round(cfg, st, pop, rng, trace)
    elif cfg.algorithm == "ServerOnly":
        out = _server_only_round(cfg, st, pop, rng, trace)
    else:
        out = _server_optimizer_round(cfg, st, pop, rng, trace)
    out[1].wall_ns = time.perf_counter_ns() - start
    return out


def fedavg_round(cfg, st, pop, rng):
    return run_round(replace(cfg, algorithm="FedAvg"), st, pop, rng)


def scaffold_round(cfg, st, pop, rng):
    return run_round(replace(cfg, algorithm="Scaffold"), st, pop, rng)


def loc_mime_round(cfg, st, pop, rng):
    return run_round(replace(cfg, algorithm="LocMime"), st, pop, rng)


def server_only_round(cfg, st, pop, rng):
    return run_round(replace(cfg, algorithm="ServerOnly"), st, pop, rng)


def run_rounds(cfg: AlgoConfig, pop: ClientPopulation, x0, T: int, seed: int, trace_every: int = 0):
    """Run T rounds from x0; returns (final state, list of records).

    Round t uses stream ``(seed, t)``; the MVR warm-up uses ``(seed, 0)``.
    ``trace_every=k`` traces rounds k, 2k, ... (Mime/MimeLite only).
    """
    root = RngStream(seed)
    st = init_server_state(cfg, pop, x0, root.child(0))
    records = []
    for t in range(1, T + 1):
        tr = trace_every > 0 and t % trace_every == 0
        st, rec = run_round(cfg, st, pop, root.child(t), trace=tr)
        records.append(rec)
    return st, records


# ---------------------------------------------------------------------------
# theory-driven hyper-parameters


def theory_schedule(algorithm: str, *, L: float, delta: float, G2: float, F: float, S: int, K: int, T: int,
                    B: float = 1.0, mu: float | None = None, sigma2: float = 0.0) -> dict:
    """Step size (and MVR momentum weight) from the convergence rates, constants set to 1.

    Mime/MimeLite with SGD-like bases: eta = 1/(mu K T) under PL, else
    sqrt(F S / (L G~^2 T K^2)); capped so that K eta <= 1/(2 L B).
    MVR: eta = min(1/(delta K), (S F / (G^2 T K^3))^(1/3)) capped at 1/(2 L B),
    a = delta^2 S^(2/3) / (T G^2)^(2/3) clipped to [1/T, 1] (MimeLite uses
    G^2 + sigma^2 and drops the S factors). K is raised to at least L/delta.
    """
    out: dict = {"K": K}
    if algorithm in MVR_FAMILY:
        if delta > 0:
            out["K"] = K = max(K, math.ceil(L / delta))
        lite = algorithm == "MimeLiteMVR"
        g2 = G2 + sigma2 if lite else G2
        s_eff = 1 if lite else S
        cands = [1.0 / (2 * L * B)]
        if delta > 0:
            cands.append(1.0 / (delta * K))
        if g2 > 0 and F > 0:
            cands.append((s_eff * F / (g2 * T * K**3)) ** (1.0 / 3.0))
        out["eta"] = min(cands)
        a = delta**2 * s_eff ** (2.0 / 3.0) / (T * g2) ** (2.0 / 3.0) if g2 > 0 else 1.0
        out["a"] = float(min(1.0, max(1.0 / T, a)))
        return out
    g_tilde = G2 + (sigma2 / K if K else 0.0)
    cap = 1.0 / (2 * L * B * max(K, 1))
    if mu is not None and mu > 0:
        eta = 1.0 / (mu * max(K, 1) * T)
    elif g_tilde > 0 and F > 0:
        eta = math.sqrt(F * S / (L * g_tilde * T * max(K, 1) ** 2))
    else:
        eta = cap
    out["eta"] = min(eta, cap)
    return out


def theory_schedule_for(cfg: AlgoConfig, pop: ClientPopulation, x0, T: int, probes) -> dict:
    """Measure L, delta, G^2, sigma^2, F on ``pop`` and feed :func:`theory_schedule`."""
    from .problems import estimate_G, estimate_L, estimate_delta, estimate_sigma, reference_optimum

    _, f_star = reference_optimum(pop, x0)
    return theory_schedule(
        cfg.algorithm,
        L=estimate_L(pop, probes),
        delta=estimate_delta(pop, probes),
        G2=estimate_G(pop, probes),
        F=max(pop.loss(x0) - f_star, 0.0),
        S=cfg.S,
        K=cfg.K,
        T=T,
        B=lipschitz_bound(cfg.base),
        sigma2=estimate_sigma(pop, probes),
    )
