"""Centralized optimizers split into a parameter update and a state update.

Each optimizer is a pair ``(u_step, v_step)``: ``u_step(g, s)`` returns the
descent direction (the caller applies ``x - eta * direction``) and
``v_step(g, s)`` returns the next state. ``u_step`` is affine in ``g`` for a
fixed state, which is what lets a federated round reduce to one centralized
step.

No bias correction is applied to Adam, and ``eps`` sits outside the square
root: ``direction = (...) / (eps + sqrt(v))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

from .core import ContractViolation

OptimizerKind = Literal["SGD", "SGDm", "Adam", "Adagrad"]
KINDS: tuple[str, ...] = ("SGD", "SGDm", "Adam", "Adagrad")


@dataclass(frozen=True)
class OptimizerSpec:
    kind: OptimizerKind = "SGD"
    beta: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-7
    adagrad_init: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractViolation(f"unknown optimizer kind {self.kind!r}")
        for name in ("beta", "beta1", "beta2"):
            val = getattr(self, name)
            if not 0.0 <= val < 1.0:
                raise ContractViolation(f"{name} must lie in [0, 1), got {val}")
        if self.eps <= 0:
            raise ContractViolation("eps must be positive")
        if self.adagrad_init < 0:
            raise ContractViolation("adagrad_init must be nonnegative")


@dataclass(frozen=True)
class SGDState:
    pass


@dataclass(frozen=True)
class MomentumState:
    m: np.ndarray


@dataclass(frozen=True)
class AdagradState:
    v: np.ndarray


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray


OptimizerState = Union[SGDState, MomentumState, AdagradState, AdamState]

_STATE_TYPE = {
    "SGD": SGDState,
    "SGDm": MomentumState,
    "Adagrad": AdagradState,
    "Adam": AdamState,
}


def init_state(spec: OptimizerSpec, dim: int) -> OptimizerState:
    if spec.kind == "SGD":
        return SGDState()
    if spec.kind == "SGDm":
        return MomentumState(np.zeros(dim))
    if spec.kind == "Adagrad":
        return AdagradState(np.full(dim, spec.adagrad_init))
    return AdamState(np.zeros(dim), np.zeros(dim))


def _check(spec: OptimizerSpec, g: np.ndarray, s: OptimizerState) -> None:
    if not isinstance(s, _STATE_TYPE[spec.kind]):
        raise ContractViolation(
            f"state {type(s).__name__} does not match optimizer {spec.kind}"
        )
    for arr in vars(s).values():
        if arr.shape != g.shape:
            raise ContractViolation(
                f"state dimension {arr.shape} does not match gradient {g.shape}"
            )


def u_step(spec: OptimizerSpec, g: np.ndarray, s: OptimizerState) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    _check(spec, g, s)
    if spec.kind == "SGD":
        return g.copy()
    if spec.kind == "SGDm":
        return (1.0 - spec.beta) * g + spec.beta * s.m
    if spec.kind == "Adagrad":
        return g / (spec.eps + np.sqrt(s.v))
    return ((1.0 - spec.beta1) * g + spec.beta1 * s.m) / (spec.eps + np.sqrt(s.v))


def v_step(spec: OptimizerSpec, g: np.ndarray, s: OptimizerState) -> OptimizerState:
    g = np.asarray(g, dtype=np.float64)
    _check(spec, g, s)
    if spec.kind == "SGD":
        return s
    if spec.kind == "SGDm":
        return MomentumState((1.0 - spec.beta) * g + spec.beta * s.m)
    if spec.kind == "Adagrad":
        return AdagradState(s.v + g * g)
    return AdamState(
        (1.0 - spec.beta1) * g + spec.beta1 * s.m,
        (1.0 - spec.beta2) * g * g + spec.beta2 * s.v,
    )


def lipschitz_bound(spec: OptimizerSpec) -> float:
    """Bound B with ``|u(g, s) - u(0, s)| <= B |g|`` for every reachable state.

    For Adagrad and Adam the worst case is ``v = 0``, giving ``1 / eps``.
    """
    if spec.kind in ("SGD", "SGDm"):
        return 1.0
    return 1.0 / spec.eps


def state_size(spec: OptimizerSpec, dim: int) -> int:
    """Number of floats in the optimizer state (what a client must download)."""
    return {"SGD": 0, "SGDm": dim, "Adagrad": dim, "Adam": 2 * dim}[spec.kind]


def state_arrays(s: OptimizerState) -> list[np.ndarray]:
    return [arr for arr in vars(s).values()]
