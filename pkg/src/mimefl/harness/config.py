"""Experiment configuration files.

A config is an INI file (``configparser`` syntax, ``#`` comments)::

    [experiment]
    seed = 0              # required; no entropy is ever drawn from the environment
    rounds = 200          # T >= 1
    out = results         # output directory (relative to the working directory)
    plot = true
    theory_mode = false   # derive eta (and a, K for MVR) from measured constants
    trace_every = 0       # oracle: check every k-th round (0 means every round)
    target_eps = 1e-6     # threshold on f - f* for rounds-to-eps
    x0 = 0                # scalar (broadcast) or comma list
    workers = 1           # threads simulating clients inside a round

    [problem]
    kind = quadratic      # quadratic | logistic | centered | file
    ...                   # the fields of QuadraticSpec / LogisticSpec
    weighting = uniform   # uniform | by_n

    [algo:NAME]           # one section per algorithm, run in file order
    algorithm = Mime
    base = SGDm           # SGD | SGDm | Adam | Adagrad
    beta = 0.9            # base optimizer fields: beta beta1 beta2 eps adagrad_init
    eta = 0.01
    ...                   # any other AlgoConfig field

    [grid]                # optional default grid for ``sweep``
    eta = 1e0, 1e-0.5, 1e-1, ..., 1e-4

``kind = centered`` builds one-dimensional clients ``c_i/2 (x - z_i)^2`` from
``curvatures`` and ``centers`` lists; ``kind = file`` loads a saved population
from ``path`` (resolved against the config file's directory).
"""

from __future__ import annotations

import configparser
import io
import math
import re
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from ..algorithms import AlgoConfig
from ..base_opt import OptimizerSpec
from ..problems import LogisticSpec, QuadraticSpec


class ConfigError(ValueError):
    """A config file failed validation; the message names the offending field."""


PROBLEM_KINDS = ("quadratic", "logistic", "centered", "file")
SCENARIOS = ("drift_demo", "reduction_check", "scaling_S", "mvr_vs_sgd", "mini_sweep")

_BASE_FIELDS = {f.name for f in fields(OptimizerSpec)} - {"kind"}
_ALGO_FIELDS = {f.name: f for f in fields(AlgoConfig)}
_EXPERIMENT_KEYS = {"seed", "rounds", "out", "plot", "theory_mode", "trace_every", "target_eps", "x0", "workers"}


@dataclass(frozen=True)
class ExperimentConfig:
    problem: dict
    algos: tuple[AlgoConfig, ...]
    rounds: int
    seed: int
    out: str = "results"
    plot: bool = True
    theory_mode: bool = False
    trace_every: int = 0
    target_eps: float = 1e-6
    x0: tuple[float, ...] = (0.0,)
    workers: int = 1
    grid: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("experiment.rounds must be at least 1")
        if not self.algos:
            raise ConfigError("config needs at least one [algo:NAME] section")
        if self.trace_every < 0:
            raise ConfigError("experiment.trace_every must be nonnegative")
        if self.workers < 1:
            raise ConfigError("experiment.workers must be at least 1")
        labels = [a.label for a in self.algos]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"algorithm names must be unique, got {labels}")


# ---------------------------------------------------------------------------
# value parsing

_POW = re.compile(r"^\s*([-+]?\d*\.?\d+)[eE]([-+]?\d*\.?\d+)\s*$")


def parse_number(text: str) -> float:
    """Float parser that also accepts fractional exponents such as ``1e-0.5``."""
    try:
        return float(text)
    except ValueError:
        m = _POW.match(text)
        if not m:
            raise
        return float(m.group(1)) * 10.0 ** float(m.group(2))


def parse_list(text: str) -> list[float]:
    """Comma list of numbers; ``...`` between two log-spaced ends fills in the
    geometric steps implied by the first two entries."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if "..." in parts:
        k = parts.index("...")
        if k < 2 or k != len(parts) - 2:
            raise ValueError("'...' needs two leading values and one trailing value")
        a, b, end = parse_number(parts[0]), parse_number(parts[1]), parse_number(parts[-1])
        head = [parse_number(p) for p in parts[:k]]
        ratio = b / a
        steps = round(math.log(end / head[-1]) / math.log(ratio))
        if steps < 0:
            raise ValueError("'...' range does not reach its end value")
        tail = [head[-1] * ratio**j for j in range(1, steps + 1)]
        if tail:
            tail[-1] = end
        return head + tail
    return [parse_number(p) for p in parts]


def _bool(text: str, name: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{name}: expected a boolean, got {text!r}")


def _typed(name: str, text: str, kind):
    try:
        if kind is bool:
            return _bool(text, name)
        if kind is int:
            return int(text)
        if kind is float:
            return parse_number(text)
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


_ALGO_TYPES = {
    "algorithm": str, "eta": float, "server_lr": float, "K": int, "S": int, "a": float,
    "mu_prox": float, "weighting": str, "split_communication": bool, "batch_size": int,
    "local_mode": str, "control_variate_source": str, "mvr_anchor": str,
    "warmup_rounds": int, "workers": int, "name": str,
}


def _algo_from_section(name: str, sec) -> AlgoConfig:
    base_kw = {}
    algo_kw = {"name": name}
    base_kind = "SGD"
    for key, raw in sec.items():
        where = f"algo:{name}.{key}"
        if key == "base":
            base_kind = raw.strip()
        elif key in _BASE_FIELDS:
            base_kw[key] = _typed(where, raw, float)
        elif key in _ALGO_TYPES and key != "name":
            if key == "batch_size" and raw.strip().lower() in ("none", "full", ""):
                algo_kw[key] = None
            else:
                algo_kw[key] = _typed(where, raw, _ALGO_TYPES[key])
        else:
            raise ConfigError(f"{where}: unknown key")
    try:
        base = OptimizerSpec(kind=base_kind, **base_kw)
    except ValueError as exc:
        raise ConfigError(f"algo:{name}.base: {exc}") from None
    try:
        return AlgoConfig(base=base, **algo_kw)
    except ValueError as exc:
        raise ConfigError(f"algo:{name}: {exc}") from None


_PROBLEM_TYPES = {
    "quadratic": {f.name: f.type for f in fields(QuadraticSpec)},
    "logistic": {f.name: f.type for f in fields(LogisticSpec)},
}


def _problem_from_section(sec) -> dict:
    if "kind" not in sec:
        raise ConfigError("problem.kind is required")
    kind = sec["kind"].strip()
    if kind not in PROBLEM_KINDS:
        raise ConfigError(f"problem.kind: expected one of {PROBLEM_KINDS}, got {kind!r}")
    out: dict = {"kind": kind, "weighting": sec.get("weighting", "uniform").strip()}
    if out["weighting"] not in ("uniform", "by_n"):
        raise ConfigError(f"problem.weighting: expected uniform or by_n, got {out['weighting']!r}")
    for key, raw in sec.items():
        if key in ("kind", "weighting"):
            continue
        where = f"problem.{key}"
        if kind in _PROBLEM_TYPES:
            types = _PROBLEM_TYPES[kind]
            if key == "seed":
                out[key] = _typed(where, raw, int)
                continue
            if key not in types:
                raise ConfigError(f"{where}: unknown key for kind={kind}")
            out[key] = _typed(where, raw, int if types[key] in (int, "int") else float)
        elif kind == "centered":
            if key not in ("curvatures", "centers", "samples_per_client"):
                raise ConfigError(f"{where}: unknown key for kind=centered")
            try:
                out[key] = int(raw) if key == "samples_per_client" else parse_list(raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: {exc}") from None
        else:
            if key != "path":
                raise ConfigError(f"{where}: unknown key for kind=file")
            out[key] = raw.strip()
    if kind == "centered":
        for key in ("curvatures", "centers"):
            if key not in out:
                raise ConfigError(f"problem.{key} is required for kind=centered")
        if len(out["curvatures"]) != len(out["centers"]):
            raise ConfigError("problem.centers: must have as many entries as problem.curvatures")
    if kind == "file" and "path" not in out:
        raise ConfigError("problem.path is required for kind=file")
    return out


def parse_config(text: str, base_dir: str = ".") -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str  # keep K and S upper case
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    if not cp.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    if not cp.has_section("problem"):
        raise ConfigError("missing [problem] section")
    exp = cp["experiment"]
    for key in exp:
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError(f"experiment.{key}: unknown key")
    if "seed" not in exp:
        raise ConfigError("experiment.seed is required")
    if "rounds" not in exp:
        raise ConfigError("experiment.rounds is required")
    known = {"experiment", "problem", "grid"}
    algos = []
    for sec in cp.sections():
        if sec.startswith("algo:"):
            name = sec[len("algo:"):].strip()
            if not name:
                raise ConfigError("algo section needs a name: [algo:NAME]")
            algos.append(_algo_from_section(name, cp[sec]))
        elif sec not in known:
            raise ConfigError(f"[{sec}]: unknown section")
    grid = {}
    if cp.has_section("grid"):
        for key, raw in cp["grid"].items():
            try:
                grid[key] = parse_list(raw)
            except ValueError as exc:
                raise ConfigError(f"grid.{key}: {exc}") from None
    try:
        x0 = tuple(parse_list(exp.get("x0", "0")))
    except ValueError as exc:
        raise ConfigError(f"experiment.x0: {exc}") from None
    return ExperimentConfig(
        problem=_problem_from_section(cp["problem"]),
        algos=tuple(algos),
        rounds=_typed("experiment.rounds", exp["rounds"], int),
        seed=_typed("experiment.seed", exp["seed"], int),
        out=exp.get("out", "results").strip(),
        plot=_bool(exp.get("plot", "true"), "experiment.plot"),
        theory_mode=_bool(exp.get("theory_mode", "false"), "experiment.theory_mode"),
        trace_every=_typed("experiment.trace_every", exp.get("trace_every", "0"), int),
        target_eps=_typed("experiment.target_eps", exp.get("target_eps", "1e-6"), float),
        x0=x0,
        workers=_typed("experiment.workers", exp.get("workers", "1"), int),
        grid=grid,
        base_dir=base_dir,
    )


def parse_grid(text: str) -> dict:
    """Grid file: a ``[grid]`` section of ``key = value list`` lines.

    A key is either an algorithm field (applies to every algorithm) or
    ``NAME.field`` (one algorithm only).
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable grid: {exc}") from None
    if not cp.has_section("grid"):
        raise ConfigError("grid file needs a [grid] section")
    grid = {}
    for key, raw in cp["grid"].items():
        try:
            grid[key] = parse_list(raw)
        except ValueError as exc:
            raise ConfigError(f"grid.{key}: {exc}") from None
    if not grid:
        raise ConfigError("grid is empty")
    return grid


def scenario_text(name: str) -> str:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; bundled: {', '.join(SCENARIOS)}")
    return resources.files("mimefl.harness").joinpath("scenarios", f"{name}.ini").read_text()


def load_config(ref: str) -> ExperimentConfig:
    """Load a config from a file path or a bundled scenario name."""
    path = Path(ref)
    if path.is_file():
        return parse_config(path.read_text(), base_dir=str(path.parent))
    if ref in SCENARIOS:
        return parse_config(scenario_text(ref))
    raise ConfigError(f"config {ref!r} is neither a file nor a bundled scenario")


# ---------------------------------------------------------------------------
# writing


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def format_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config(format_config(c)) == c``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["experiment"] = {
        "seed": _fmt(cfg.seed), "rounds": _fmt(cfg.rounds), "out": cfg.out, "plot": _fmt(cfg.plot),
        "theory_mode": _fmt(cfg.theory_mode), "trace_every": _fmt(cfg.trace_every),
        "target_eps": _fmt(cfg.target_eps), "x0": _fmt(list(cfg.x0)), "workers": _fmt(cfg.workers),
    }
    cp["problem"] = {k: _fmt(v) for k, v in cfg.problem.items()}
    default_base = OptimizerSpec()
    default_algo = AlgoConfig()
    for a in cfg.algos:
        sec = {"algorithm": a.algorithm, "base": a.base.kind}
        for f in fields(OptimizerSpec):
            if f.name != "kind" and getattr(a.base, f.name) != getattr(default_base, f.name):
                sec[f.name] = _fmt(getattr(a.base, f.name))
        for key in _ALGO_TYPES:
            if key in ("algorithm", "name"):
                continue
            val = getattr(a, key)
            if val != getattr(default_algo, key):
                sec[key] = "none" if val is None else _fmt(val)
        cp[f"algo:{a.label}"] = sec
    if cfg.grid:
        cp["grid"] = {k: _fmt(v) for k, v in cfg.grid.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Replace top-level fields, ignoring ``None`` values."""
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
