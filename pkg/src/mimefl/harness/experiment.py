"""Experiment orchestration: build a population, run algorithms, write CSVs."""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..algorithms import MVR_FAMILY, AlgoConfig, init_server_state, run_round, theory_schedule_for
from ..core import ContractViolation, RngStream
from ..diagnostics import drift_trace, reduction_oracle
from ..problems import (
    ClientPopulation,
    LogisticSpec,
    QuadraticClient,
    QuadraticPopulation,
    QuadraticSpec,
    default_probes,
    estimate_delta,
    estimate_G,
    estimate_L,
    estimate_sigma,
    load_population,
    make_logistic_population,
    make_quadratic_population,
    reference_optimum,
)
from .config import ConfigError, ExperimentConfig

RESULT_COLUMNS = ("algo", "t", "f_value", "grad_norm_sq", "drift", "momentum_err_sq", "comm_down", "comm_up")
SUMMARY_COLUMNS = ("algo", "status", "final_f_gap", "final_grad_norm_sq", "rounds_to_eps",
                   "total_comm_down", "total_comm_up")
ORACLE_COLUMNS = ("kind", "algo", "t", "lhs", "rhs", "holds")

# stream labels kept apart from the per-round labels 0..T
POPULATION_LABEL = 2**32 - 1
PROBE_LABEL = 2**32 - 2


@dataclass
class Row:
    algo: str
    t: int
    f_value: float
    grad_norm_sq: float
    drift: float
    momentum_err_sq: float | None
    comm_down: int
    comm_up: int
    flagged: bool = False

    def cells(self) -> list[str]:
        m = "" if self.momentum_err_sq is None else _num(self.momentum_err_sq)
        return [self.algo, str(self.t), _num(self.f_value), _num(self.grad_norm_sq), _num(self.drift), m,
                str(self.comm_down), str(self.comm_up)]


@dataclass
class Summary:
    algo: str
    status: str  # "ok" or "diverged"
    final_f_gap: float
    final_grad_norm_sq: float
    rounds_to_eps: int | None
    total_comm_down: int
    total_comm_up: int
    params: dict = field(default_factory=dict)
    best: bool = False


@dataclass
class ResultTable:
    rows: list[Row]
    summaries: list[Summary]
    f_star: float
    param_names: tuple[str, ...] = ()

    def series(self, algo: str) -> list[Row]:
        return [r for r in self.rows if r.algo == algo and not r.flagged]

    @property
    def algos(self) -> list[str]:
        return [s.algo for s in self.summaries]


def _num(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# setup


def build_population(cfg: ExperimentConfig) -> ClientPopulation:
    spec = dict(cfg.problem)
    kind = spec.pop("kind")
    weighting = spec.pop("weighting", "uniform")
    pop_seed = spec.pop("seed", cfg.seed)
    rng = RngStream(pop_seed).child(POPULATION_LABEL)
    try:
        if kind == "quadratic":
            pop = make_quadratic_population(QuadraticSpec(**spec), rng)
        elif kind == "logistic":
            pop = make_logistic_population(LogisticSpec(**spec), rng)
        elif kind == "centered":
            n = spec.get("samples_per_client", 1)
            clients = [QuadraticClient.centered(i, [[c]], [z], n)
                       for i, (c, z) in enumerate(zip(spec["curvatures"], spec["centers"]))]
            pop = QuadraticPopulation(clients)
        else:
            path = Path(spec["path"])
            if not path.is_absolute():
                path = Path(cfg.base_dir) / path
            pop = load_population(path)
    except (ContractViolation, OSError) as exc:
        raise ConfigError(f"problem: {exc}") from None
    if weighting != pop.weighting:
        pop = type(pop)(pop.clients, weighting=weighting)
    return pop


def initial_point(cfg: ExperimentConfig, dim: int) -> np.ndarray:
    if len(cfg.x0) == 1:
        return np.full(dim, cfg.x0[0])
    if len(cfg.x0) != dim:
        raise ConfigError(f"experiment.x0: expected 1 or {dim} entries, got {len(cfg.x0)}")
    return np.array(cfg.x0, dtype=np.float64)


def resolve_algo(cfg: ExperimentConfig, algo: AlgoConfig, pop: ClientPopulation, x0) -> AlgoConfig:
    """Apply experiment-wide workers and, in theory mode, the derived step sizes."""
    if algo.workers == 1 and cfg.workers > 1:
        algo = replace(algo, workers=cfg.workers)
    if cfg.theory_mode:
        probes = default_probes(pop, RngStream(cfg.seed).child(PROBE_LABEL))
        sched = theory_schedule_for(algo, pop, x0, cfg.rounds, probes)
        algo = replace(algo, **sched)
    if algo.S > pop.N:
        raise ConfigError(f"algo:{algo.label}.S: cannot sample {algo.S} clients from N={pop.N}")
    return algo


# ---------------------------------------------------------------------------
# running


def _finite(st, rec) -> bool:
    vals = [rec.f_value, rec.grad_norm_sq, rec.drift]
    if rec.momentum_err_sq is not None:
        vals.append(rec.momentum_err_sq)
    return all(math.isfinite(v) for v in vals) and bool(np.all(np.isfinite(st.x)))


def run_algorithm(algo: AlgoConfig, pop: ClientPopulation, x0, T: int, seed: int, f_star: float,
                  target_eps: float, params: dict | None = None) -> tuple[list[Row], Summary]:
    """One algorithm for T rounds; a non-finite value ends the run with a flagged row."""
    root = RngStream(seed)
    label = algo.label
    rows: list[Row] = []
    down = up = 0
    hit = None
    with np.errstate(all="ignore"):
        st = init_server_state(algo, pop, x0, root.child(0))
        for t in range(1, T + 1):
            st, rec = run_round(algo, st, pop, root.child(t))
            down += rec.comm_down
            up += rec.comm_up
            if not _finite(st, rec):
                rows.append(Row(label, t, math.nan, math.nan, math.nan, None, rec.comm_down, rec.comm_up, True))
                return rows, Summary(label, "diverged", math.nan, math.nan, hit, down, up, params or {})
            rows.append(Row(label, t, rec.f_value, rec.grad_norm_sq, rec.drift, rec.momentum_err_sq,
                            rec.comm_down, rec.comm_up))
            if hit is None and rec.f_value - f_star <= target_eps:
                hit = t
    last = rows[-1]
    return rows, Summary(label, "ok", last.f_value - f_star, last.grad_norm_sq, hit, down, up, params or {})


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> ResultTable:
    """Run every algorithm from the same x0 and seed; write CSVs when ``out_dir`` is given."""
    pop = build_population(cfg)
    x0 = initial_point(cfg, pop.dim)
    _, f_star = reference_optimum(pop, x0)
    rows: list[Row] = []
    summaries: list[Summary] = []
    for algo in cfg.algos:
        algo = resolve_algo(cfg, algo, pop, x0)
        r, s = run_algorithm(algo, pop, x0, cfg.rounds, cfg.seed, f_star, cfg.target_eps)
        rows.extend(r)
        summaries.append(s)
    table = ResultTable(rows, summaries, f_star)
    if out_dir is not None:
        write_table(table, out_dir)
    return table


def _expand_grid(grid: dict) -> list[dict]:
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def _apply(algo: AlgoConfig, point: dict) -> AlgoConfig:
    kw = {}
    base_kw = {}
    for key, val in point.items():
        target, _, fname = key.rpartition(".")
        if target and target != algo.label:
            continue
        if fname in ("K", "S", "warmup_rounds", "batch_size"):
            val = int(val)
        if fname in ("beta", "beta1", "beta2", "eps", "adagrad_init"):
            base_kw[fname] = val
        elif fname in AlgoConfig.__dataclass_fields__ and fname not in ("name", "algorithm", "base"):
            kw[fname] = val
        else:
            raise ConfigError(f"grid.{key}: not a tunable algorithm field")
    if base_kw:
        kw["base"] = replace(algo.base, **base_kw)
    try:
        return replace(algo, **kw)
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from None


def sweep(cfg: ExperimentConfig, grid: dict, out_dir: str | Path | None = None, workers: int = 1) -> ResultTable:
    """Cross-product of ``grid`` over every algorithm.

    All cells share the experiment seed, so they see the same cohorts and
    minibatches. Cells may run in parallel; results are collected in cell
    order. The best cell per algorithm is the completed run with the smallest
    final f; diverged runs are never picked.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("grid must be nonempty")
    pop = build_population(cfg)
    x0 = initial_point(cfg, pop.dim)
    _, f_star = reference_optimum(pop, x0)
    points = _expand_grid(grid)
    single = len(points) == 1
    cells = []
    for algo in cfg.algos:
        for point in points:
            tuned = _apply(algo, point)
            if not single:
                tag = ",".join(f"{k.rpartition('.')[2]}={v:.6g}" for k, v in point.items())
                tuned = replace(tuned, name=f"{algo.label}[{tag}]")
            cells.append((algo.label, resolve_algo(cfg, tuned, pop, x0), point))

    def run(cell):
        _, tuned, point = cell
        return run_algorithm(tuned, pop, x0, cfg.rounds, cfg.seed, f_star, cfg.target_eps, point)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, cells))
    else:
        results = [run(c) for c in cells]
    rows, summaries = [], []
    best: dict[str, tuple[float, int]] = {}
    for idx, ((family, _, _), (r, s)) in enumerate(zip(cells, results)):
        rows.extend(r)
        summaries.append(s)
        if s.status == "ok":
            cur = best.get(family)
            if cur is None or s.final_f_gap < cur[0]:
                best[family] = (s.final_f_gap, idx)
    for _, idx in best.values():
        summaries[idx].best = True
    table = ResultTable(rows, summaries, f_star, tuple(grid))
    if out_dir is not None:
        write_table(table, out_dir)
    return table


# ---------------------------------------------------------------------------
# oracle mode


@dataclass
class OracleRow:
    kind: str
    algo: str
    t: int
    lhs: float
    rhs: float
    holds: bool | None

    def cells(self) -> list[str]:
        h = "" if self.holds is None else ("1" if self.holds else "0")
        return [self.kind, self.algo, str(self.t), _num(self.lhs), _num(self.rhs), h]


def run_oracles(cfg: ExperimentConfig, out_dir: str | Path | None = None, tol: float = 1e-9) -> list[OracleRow]:
    """Measured constants, then per-round reduction and drift checks.

    Mime and MimeLite rounds get the reduction identity (lhs = deviation,
    rhs = tol) and the drift bound; MVR runs report the momentum error.
    Other algorithms only contribute their constants.
    """
    pop = build_population(cfg)
    x0 = initial_point(cfg, pop.dim)
    probes = default_probes(pop, RngStream(cfg.seed).child(PROBE_LABEL))
    out = [
        OracleRow("L", "", 0, estimate_L(pop, probes), math.nan, None),
        OracleRow("delta", "", 0, estimate_delta(pop, probes), math.nan, None),
        OracleRow("G2", "", 0, estimate_G(pop, probes), math.nan, None),
        OracleRow("sigma2", "", 0, estimate_sigma(pop, probes), math.nan, None),
    ]
    L = out[0].lhs
    every = max(cfg.trace_every, 1)
    for algo in cfg.algos:
        algo = resolve_algo(cfg, algo, pop, x0)
        root = RngStream(cfg.seed)
        st = init_server_state(algo, pop, x0, root.child(0))
        checked = algo.algorithm in ("Mime", "MimeLite")
        for t in range(1, cfg.rounds + 1):
            rng = root.child(t)
            if checked and t % every == 0:
                rep = reduction_oracle(algo, st, pop, rng)
                out.append(OracleRow("reduction", algo.label, t, rep.max_abs_deviation, tol,
                                     rep.max_abs_deviation <= tol))
                dt = drift_trace(rep.trace, L)
                out.append(OracleRow("drift", algo.label, t, dt.eps_K, dt.bound_rhs,
                                     (dt.eps_K <= dt.bound_rhs + tol) if dt.applicable else None))
            st, rec = run_round(algo, st, pop, rng)
            if rec.momentum_err_sq is not None and t % every == 0:
                out.append(OracleRow("momentum", algo.label, t, rec.momentum_err_sq, math.nan, None))
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        _write_csv(d / "oracle.csv", ORACLE_COLUMNS, [r.cells() for r in out])
    return out


# ---------------------------------------------------------------------------
# output


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_table(table: ResultTable, out_dir: str | Path) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    _write_csv(d / "results.csv", RESULT_COLUMNS, [r.cells() for r in table.rows])
    extra = list(table.param_names)
    header = list(SUMMARY_COLUMNS) + extra + (["best"] if extra else [])
    out = []
    for s in table.summaries:
        cells = [s.algo, s.status, _num(s.final_f_gap), _num(s.final_grad_norm_sq),
                 "" if s.rounds_to_eps is None else str(s.rounds_to_eps),
                 str(s.total_comm_down), str(s.total_comm_up)]
        cells += [_num(s.params[k]) if k in s.params else "" for k in extra]
        if extra:
            cells.append("1" if s.best else "0")
        out.append(cells)
    _write_csv(d / "summary.csv", header, out)


def read_results(path: str | Path) -> list[dict]:
    """Parse a results.csv back into typed dictionaries."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise ValueError(f"unexpected columns {reader.fieldnames}")
        out = []
        for r in reader:
            out.append({
                "algo": r["algo"], "t": int(r["t"]), "f_value": float(r["f_value"]),
                "grad_norm_sq": float(r["grad_norm_sq"]), "drift": float(r["drift"]),
                "momentum_err_sq": float(r["momentum_err_sq"]) if r["momentum_err_sq"] else None,
                "comm_down": int(r["comm_down"]), "comm_up": int(r["comm_up"]),
            })
        return out
