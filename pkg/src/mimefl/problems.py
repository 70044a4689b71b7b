"""Synthetic client populations with tunable heterogeneity.

A population is a finite list of clients; the federated objective is the
weighted mean of client objectives, and every expectation over clients is
computed by exact enumeration. Each client stores its per-sample losses
explicitly so that minibatch gradients are exact means over index sets.

Two loss families are provided:

* quadratics ``1/2 x^T A_i x - b_{i,v}^T x + c_{i,v}``, where the Hessian is
  shared by all samples of a client and samples differ only in the linear
  term. Hessian dissimilarity, gradient dissimilarity at the optimum,
  within-client noise and the spectrum of the mean Hessian are each set by
  their own knob.
* l2-regularized logistic regression on Gaussian feature clusters with
  per-client feature shifts and label priors.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from scipy.special import expit

from .core import ContractViolation, RngStream, as_vector, weighted_average

Weighting = Literal["uniform", "by_n"]


class Client(abc.ABC):
    """One client holding ``n`` samples of a differentiable loss."""

    id: int
    n: int
    dim: int

    @abc.abstractmethod
    def sample_losses(self, x: np.ndarray) -> np.ndarray:
        """Per-sample losses, shape (n,)."""

    @abc.abstractmethod
    def sample_gradients(self, x: np.ndarray, batch=None) -> np.ndarray:
        """Per-sample gradients, shape (len(batch), d)."""

    def loss(self, x, batch=None) -> float:
        losses = self.sample_losses(x)
        return float(losses.mean() if batch is None else losses[batch].mean())

    def grad(self, x, batch=None) -> np.ndarray:
        return self.sample_gradients(x, batch).mean(axis=0)


class QuadraticClient(Client):
    def __init__(self, id: int, hessian, linear, const=None):
        self.id = int(id)
        self.A = np.atleast_2d(np.asarray(hessian, dtype=np.float64))
        self.b = np.atleast_2d(np.asarray(linear, dtype=np.float64))
        self.dim = self.A.shape[0]
        if self.A.shape != (self.dim, self.dim) or not np.allclose(self.A, self.A.T):
            raise ContractViolation("client Hessian must be a symmetric square matrix")
        if self.b.shape[1] != self.dim:
            raise ContractViolation("linear terms do not match Hessian dimension")
        self.n = self.b.shape[0]
        self.c = np.zeros(self.n) if const is None else np.asarray(const, dtype=np.float64).reshape(self.n)
        self.b_mean = self.b.mean(axis=0)

    @classmethod
    def centered(cls, id: int, curvature, center, n: int = 1) -> "QuadraticClient":
        """Client with loss ``1/2 (x - center)^T A (x - center)`` on every sample."""
        A = np.atleast_2d(np.asarray(curvature, dtype=np.float64))
        center = np.atleast_1d(np.asarray(center, dtype=np.float64))
        b = A @ center
        c = 0.5 * center @ A @ center
        return cls(id, A, np.tile(b, (n, 1)), np.full(n, c))

    def sample_losses(self, x):
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * x @ self.A @ x - self.b @ x + self.c

    def sample_gradients(self, x, batch=None):
        Ax = self.A @ x
        b = self.b if batch is None else self.b[batch]
        return Ax[None, :] - b

    def grad(self, x, batch=None):
        if batch is None:
            return self.A @ x - self.b_mean
        if len(batch) == 0:
            raise ContractViolation("empty minibatch")
        return self.A @ x - self.b[batch].sum(axis=0) / len(batch)

    def loss(self, x, batch=None):
        x = np.asarray(x, dtype=np.float64)
        if batch is None:
            return float(0.5 * x @ self.A @ x - self.b_mean @ x + self.c.mean())
        return super().loss(x, batch)

    def optimum(self) -> np.ndarray:
        return np.linalg.solve(self.A, self.b_mean)


class LogisticClient(Client):
    """Per-sample loss ``log(1 + exp(-y z^T x)) + lam/2 |x|^2`` with labels in {-1, +1}."""

    def __init__(self, id: int, features, labels, lam: float = 0.0):
        self.id = int(id)
        self.Z = np.atleast_2d(np.asarray(features, dtype=np.float64))
        self.y = np.asarray(labels, dtype=np.float64).reshape(-1)
        if self.Z.shape[0] != self.y.shape[0]:
            raise ContractViolation("features and labels disagree on sample count")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ContractViolation("labels must be -1 or +1")
        if lam < 0:
            raise ContractViolation("regularization must be nonnegative")
        self.n, self.dim = self.Z.shape
        self.lam = float(lam)

    def sample_losses(self, x):
        margins = self.y * (self.Z @ x)
        return np.logaddexp(0.0, -margins) + 0.5 * self.lam * (x @ x)

    def sample_gradients(self, x, batch=None):
        Z = self.Z if batch is None else self.Z[batch]
        y = self.y if batch is None else self.y[batch]
        coef = -y * expit(-y * (Z @ x))
        return coef[:, None] * Z + self.lam * x[None, :]

    def grad(self, x, batch=None):
        if batch is not None and len(batch) == 0:
            raise ContractViolation("empty minibatch")
        return self.sample_gradients(x, batch).mean(axis=0)


class ClientPopulation:
    """Finite universe of clients; the objective is their weighted mean."""

    kind = "generic"

    def __init__(self, clients: Sequence[Client], weighting: Weighting = "uniform"):
        if not clients:
            raise ContractViolation("population needs at least one client")
        if weighting not in ("uniform", "by_n"):
            raise ContractViolation(f"unknown weighting {weighting!r}")
        self.clients = list(clients)
        self.weighting = weighting
        self.dim = self.clients[0].dim
        if any(c.dim != self.dim for c in self.clients):
            raise ContractViolation("clients disagree on dimension")
        self.weights = np.array(
            [1.0 if weighting == "uniform" else float(c.n) for c in self.clients]
        )

    @property
    def N(self) -> int:
        return len(self.clients)

    def loss(self, x) -> float:
        vals = np.array([c.loss(x) for c in self.clients])
        return float(vals @ self.weights / self.weights.sum())

    def gradient(self, x) -> np.ndarray:
        return weighted_average([c.grad(x) for c in self.clients], self.weights)

    def client_gradients(self, x) -> np.ndarray:
        return np.stack([c.grad(x) for c in self.clients])


class QuadraticPopulation(ClientPopulation):
    kind = "quadratic"

    def __init__(self, clients: Sequence[QuadraticClient], weighting: Weighting = "uniform"):
        super().__init__(clients, weighting)
        w = self.weights / self.weights.sum()
        # offsets from the first client keep identical Hessians exactly identical to the mean
        A0 = self.clients[0].A
        self.mean_hessian = A0 + sum(wi * (c.A - A0) for wi, c in zip(w, self.clients))
        self.mean_linear = sum(wi * c.b_mean for wi, c in zip(w, self.clients))
        self.mean_const = float(sum(wi * c.c.mean() for wi, c in zip(w, self.clients)))

    def loss(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(0.5 * x @ self.mean_hessian @ x - self.mean_linear @ x + self.mean_const)

    def gradient(self, x) -> np.ndarray:
        return self.mean_hessian @ x - self.mean_linear


class LogisticPopulation(ClientPopulation):
    kind = "logistic"

    def __init__(self, clients: Sequence[LogisticClient], weighting: Weighting = "uniform"):
        super().__init__(clients, weighting)
        self.Z = np.concatenate([c.Z for c in self.clients])
        self.y = np.concatenate([c.y for c in self.clients])
        self.lam = self.clients[0].lam
        per_sample = [np.full(c.n, w / c.n) for c, w in zip(self.clients, self.weights)]
        self.sample_weights = np.concatenate(per_sample) / self.weights.sum()

    def loss(self, x) -> float:
        margins = self.y * (self.Z @ x)
        return float(self.sample_weights @ np.logaddexp(0.0, -margins) + 0.5 * self.lam * (x @ x))

    def gradient(self, x) -> np.ndarray:
        coef = -self.y * expit(-self.y * (self.Z @ x)) * self.sample_weights
        return coef @ self.Z + self.lam * x


# ---------------------------------------------------------------------------
# generators


@dataclass(frozen=True)
class QuadraticSpec:
    """Knobs for :func:`make_quadratic_population`.

    ``optimum_spread`` is the root-mean-square client gradient at the global
    optimum, i.e. the gradient-dissimilarity constant G measured at x*.
    ``noise_sd`` is the root-mean-square deviation of a per-sample gradient
    from its client's full gradient.
    """

    d: int = 10
    N: int = 20
    hessian_spread: float = 0.0
    optimum_spread: float = 1.0
    noise_sd: float = 0.0
    mu: float = 1.0
    L: float = 4.0
    samples_per_client: int = 8
    optimum_scale: float = 1.0

    def __post_init__(self):
        if self.d < 1 or self.N < 1 or self.samples_per_client < 1:
            raise ContractViolation("d, N and samples_per_client must be positive")
        if not 0 < self.mu <= self.L:
            raise ContractViolation("mean Hessian must be positive definite: need 0 < mu <= L")
        if self.hessian_spread < 0 or self.optimum_spread < 0 or self.noise_sd < 0:
            raise ContractViolation("spreads and noise must be nonnegative")
        if self.hessian_spread > 2 * self.L:
            raise ContractViolation("hessian_spread cannot exceed 2L")


def _random_orthogonal(gen: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(gen.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _max_psd_step(A_half_inv: np.ndarray, Z: np.ndarray) -> float:
    """Largest t with A + t Z and A - t Z both positive semi-definite."""
    rho = np.max(np.abs(np.linalg.eigvalsh(A_half_inv @ Z @ A_half_inv)))
    return np.inf if rho == 0 else 1.0 / rho


def make_quadratic_population(spec: QuadraticSpec, rng: RngStream) -> QuadraticPopulation:
    """Build a quadratic population hitting the requested constants exactly.

    Client Hessians come in antithetic pairs ``A +/- t Z`` so their mean is
    exactly the target mean Hessian; the first pair perturbs along the top
    eigenvector so the largest deviation equals ``hessian_spread``. While
    ``hessian_spread <= L`` every pair is clipped to stay positive
    semi-definite; beyond that client Hessians may be indefinite.
    """
    gen = rng.generator()
    d, N, n = spec.d, spec.N, spec.samples_per_client
    Q = _random_orthogonal(gen, d)
    eigs = np.linspace(spec.mu, spec.L, d) if d > 1 else np.array([spec.mu])
    A_bar = (Q * eigs) @ Q.T
    A_bar = 0.5 * (A_bar + A_bar.T)
    x_star = spec.optimum_scale * gen.standard_normal(d)

    deltas = [np.zeros((d, d)) for _ in range(N)]
    delta = spec.hessian_spread
    if delta > 0 and N >= 2:
        half_inv = (Q / np.sqrt(eigs)) @ Q.T
        keep_psd = delta <= spec.L
        for p in range(N // 2):
            if p == 0:
                top = Q[:, -1]
                Z = np.outer(top, top)
            else:
                Z = gen.standard_normal((d, d))
                Z = 0.5 * (Z + Z.T)
                Z /= np.linalg.norm(Z, 2)
            t = delta
            if keep_psd and p > 0:
                t = min(delta, _max_psd_step(half_inv, Z))
            deltas[2 * p] = t * Z
            deltas[2 * p + 1] = -t * Z

    shifts = gen.standard_normal((N, d))
    shifts -= shifts.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum(shifts**2, axis=1)))
    shifts = shifts * (spec.optimum_spread / rms) if rms > 0 else shifts * 0.0

    clients = []
    for i in range(N):
        A_i = A_bar + deltas[i]
        A_i = 0.5 * (A_i + A_i.T)
        b_i = A_i @ x_star + shifts[i]
        noise = gen.standard_normal((n, d))
        noise -= noise.mean(axis=0)
        nrms = np.sqrt(np.mean(np.sum(noise**2, axis=1)))
        noise = noise * (spec.noise_sd / nrms) if nrms > 0 else noise * 0.0
        clients.append(QuadraticClient(i, A_i, b_i[None, :] + noise))
    return QuadraticPopulation(clients)


@dataclass(frozen=True)
class LogisticSpec:
    d: int = 5
    N: int = 10
    samples_per_client: int = 16
    label_skew: float = 0.0
    feature_shift: float = 0.0
    lam: float = 0.01
    class_sep: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ContractViolation("lam must be nonnegative")
        if self.samples_per_client < 1 or self.d < 1 or self.N < 1:
            raise ContractViolation("d, N and samples_per_client must be positive")


def make_logistic_population(spec: LogisticSpec, rng: RngStream) -> LogisticPopulation:
    gen = rng.generator()
    d, n = spec.d, spec.samples_per_client
    direction = gen.standard_normal(d)
    direction /= np.linalg.norm(direction)
    clients = []
    for i in range(spec.N):
        prior = expit(spec.label_skew * gen.standard_normal())
        labels = np.where(gen.random(n) < prior, 1.0, -1.0)
        shift = spec.feature_shift * gen.standard_normal(d) / np.sqrt(d)
        feats = (
            0.5 * spec.class_sep * labels[:, None] * direction[None, :]
            + shift[None, :]
            + gen.standard_normal((n, d))
        )
        clients.append(LogisticClient(i, feats, labels, spec.lam))
    return LogisticPopulation(clients)


def repartition_iid(pop: LogisticPopulation, rng: RngStream) -> LogisticPopulation:
    """Shuffle all samples across clients, keeping every client's sample count."""
    perm = rng.generator().permutation(pop.Z.shape[0])
    Z, y = pop.Z[perm], pop.y[perm]
    clients, start = [], 0
    for c in pop.clients:
        clients.append(LogisticClient(c.id, Z[start:start + c.n], y[start:start + c.n], pop.lam))
        start += c.n
    return LogisticPopulation(clients, pop.weighting)


# ---------------------------------------------------------------------------
# oracles


def full_gradient(client: Client, x) -> np.ndarray:
    return client.grad(as_vector(x, client.dim))


def minibatch_gradient(client: Client, x, batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.intp)
    if batch.size == 0:
        raise ContractViolation("empty minibatch")
    if batch.min() < 0 or batch.max() >= client.n:
        raise ContractViolation("minibatch index out of range")
    return client.grad(as_vector(x, client.dim), batch)


def population_gradient(pop: ClientPopulation, x) -> np.ndarray:
    return pop.gradient(as_vector(x, pop.dim))


def global_optimum(pop: ClientPopulation) -> np.ndarray | None:
    """Closed-form minimizer for quadratic populations, ``None`` otherwise."""
    if not isinstance(pop, QuadraticPopulation):
        return None
    eigs = np.linalg.eigvalsh(pop.mean_hessian)
    if eigs[0] <= 1e-12 * max(abs(eigs[-1]), 1.0):
        raise ContractViolation("mean Hessian is singular (mu = 0); no unique optimum")
    return np.linalg.solve(pop.mean_hessian, pop.mean_linear)


def default_probes(pop: ClientPopulation, rng: RngStream, count: int = 8) -> list[np.ndarray]:
    """Zero, the optimum when known, and ``count`` standard Gaussian points."""
    probes = [np.zeros(pop.dim)]
    x_star = global_optimum(pop)
    if x_star is not None:
        probes.append(x_star)
    gen = rng.generator()
    probes.extend(gen.standard_normal(pop.dim) for _ in range(count))
    return probes


def gradient_dissimilarity(pop: ClientPopulation, x) -> float:
    """Weighted mean of |grad f_i(x) - grad f(x)|^2 over the whole population."""
    grads = pop.client_gradients(x)
    diff = grads - pop.gradient(x)[None, :]
    return float(np.sum(diff**2, axis=1) @ pop.weights / pop.weights.sum())


def estimate_G(pop: ClientPopulation, probe_points: Sequence[np.ndarray]) -> float:
    """Return the G^2 estimate: the max over probes of the gradient dissimilarity."""
    if len(probe_points) == 0:
        raise ContractViolation("need at least one probe point")
    return max(gradient_dissimilarity(pop, as_vector(p, pop.dim)) for p in probe_points)


def estimate_sigma(pop: ClientPopulation, probe_points: Sequence[np.ndarray]) -> float:
    """Largest within-client per-sample gradient variance (sigma^2)."""
    best = 0.0
    for p in probe_points:
        for c in pop.clients:
            g = c.sample_gradients(p)
            best = max(best, float(np.mean(np.sum((g - g.mean(axis=0)) ** 2, axis=1))))
    return best


def spectral_norm(M: np.ndarray, tol: float = 1e-6, max_iter: int = 10_000) -> float:
    """Spectral norm of a symmetric matrix by power iteration on ``M @ M``."""
    d = M.shape[0]
    if not np.any(M):
        return 0.0
    v = np.ones(d) / np.sqrt(d) + 1e-3 * np.arange(d)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = M @ (M @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        new = np.sqrt(nrm)
        v = w / nrm
        if abs(new - est) <= tol * new:
            return float(new)
        est = new
    return float(est)


def _fd_sample_hessians(pop: ClientPopulation, x: np.ndarray, h: float = 1e-5) -> list[np.ndarray]:
    """Per-client stacks of per-sample Hessians by central differences of gradients."""
    out = []
    for c in pop.clients:
        H = np.empty((c.n, pop.dim, pop.dim))
        for j in range(pop.dim):
            e = np.zeros(pop.dim)
            e[j] = h
            H[:, :, j] = (c.sample_gradients(x + e) - c.sample_gradients(x - e)) / (2 * h)
        out.append(0.5 * (H + H.transpose(0, 2, 1)))
    return out


def estimate_delta(pop: ClientPopulation, probe_points: Sequence[np.ndarray] | None = None) -> float:
    """Largest spectral deviation of a per-sample Hessian from the mean Hessian.

    Quadratics are handled exactly from the stored matrices. Other families
    use finite-difference Hessians at each probe point (the zero vector when
    no probes are given).
    """
    if isinstance(pop, QuadraticPopulation):
        return max(float(np.linalg.norm(c.A - pop.mean_hessian, 2)) for c in pop.clients)
    probes = [np.zeros(pop.dim)] if probe_points is None else probe_points
    w = pop.weights / pop.weights.sum()
    best = 0.0
    for p in probes:
        hess = _fd_sample_hessians(pop, as_vector(p, pop.dim))
        H_bar = sum(wi * H.mean(axis=0) for wi, H in zip(w, hess))
        for H in hess:
            for Hs in H:
                best = max(best, spectral_norm(Hs - H_bar))
    return best


def estimate_L(pop: ClientPopulation, probe_points: Sequence[np.ndarray] | None = None) -> float:
    """Largest per-sample Hessian spectral norm (smoothness of every f_i(.; sample))."""
    if isinstance(pop, QuadraticPopulation):
        return max(float(np.linalg.norm(c.A, 2)) for c in pop.clients)
    probes = [np.zeros(pop.dim)] if probe_points is None else probe_points
    best = 0.0
    for p in probes:
        for H in _fd_sample_hessians(pop, as_vector(p, pop.dim)):
            for Hs in H:
                best = max(best, spectral_norm(Hs))
    return best


def reference_optimum(pop: ClientPopulation, x0=None) -> tuple[np.ndarray, float]:
    """Minimizer and minimum of the population objective.

    Closed form for quadratics; otherwise a tightly converged L-BFGS run from
    ``x0`` (the objectives here are smooth and, with lam > 0, strongly convex).
    """
    x_star = global_optimum(pop)
    if x_star is not None:
        return x_star, pop.loss(x_star)
    from scipy.optimize import minimize

    start = np.zeros(pop.dim) if x0 is None else as_vector(x0, pop.dim)
    res = minimize(pop.loss, start, jac=pop.gradient, method="L-BFGS-B",
                   options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 10_000})
    return res.x, float(res.fun)


# ---------------------------------------------------------------------------
# serialization

_MAGIC = "mimefl-population 1"


def _fmt(row) -> str:
    return " ".join(format(float(v), ".17g") for v in np.atleast_1d(row))


def save_population(pop: ClientPopulation, path) -> None:
    """Write a population as plain text (see README for the grammar)."""
    lines = [_MAGIC, f"kind {pop.kind}", f"d {pop.dim}", f"N {pop.N}",
             f"weighting {pop.weighting}", "n " + " ".join(str(c.n) for c in pop.clients)]
    if isinstance(pop, LogisticPopulation):
        lines.append(f"lambda {format(pop.lam, '.17g')}")
    for c in pop.clients:
        lines.append(f"client {c.id}")
        if isinstance(c, QuadraticClient):
            lines.append("hessian")
            lines.extend(_fmt(row) for row in c.A)
            lines.append("linear")
            lines.extend(_fmt(row) for row in c.b)
            lines.append("const")
            lines.append(_fmt(c.c))
        elif isinstance(c, LogisticClient):
            lines.append("features")
            lines.extend(_fmt(row) for row in c.Z)
            lines.append("labels")
            lines.append(_fmt(c.y))
        else:
            raise ContractViolation(f"cannot serialize client type {type(c).__name__}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_population(path) -> ClientPopulation:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or lines[0] != _MAGIC:
        raise ContractViolation(f"{path}: not a population file")
    it = iter(lines[1:])

    def field(name):
        key, _, val = next(it).partition(" ")
        if key != name:
            raise ContractViolation(f"{path}: expected {name!r}, found {key!r}")
        return val

    def rows(count):
        return np.array([[float(t) for t in next(it).split()] for _ in range(count)])

    kind = field("kind")
    d = int(field("d"))
    N = int(field("N"))
    weighting = field("weighting")
    ns = [int(t) for t in field("n").split()]
    lam = float(field("lambda")) if kind == "logistic" else 0.0
    clients = []
    for _ in range(N):
        cid = int(field("client"))
        if kind == "quadratic":
            field("hessian")
            A = rows(d)
            field("linear")
            b = rows(ns[len(clients)])
            field("const")
            c = rows(1)[0]
            clients.append(QuadraticClient(cid, A, b, c))
        elif kind == "logistic":
            field("features")
            Z = rows(ns[len(clients)])
            field("labels")
            y = rows(1)[0]
            clients.append(LogisticClient(cid, Z, y, lam))
        else:
            raise ContractViolation(f"{path}: unknown population kind {kind!r}")
    cls = QuadraticPopulation if kind == "quadratic" else LogisticPopulation
    return cls(clients, weighting)
