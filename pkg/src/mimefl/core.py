"""Numeric primitives shared by every other module.

Parameter vectors are plain float64 numpy arrays that are treated as values:
no function in this package mutates an array it did not allocate itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ContractViolation(ValueError):
    """Raised when a caller breaks a documented precondition."""


def as_vector(values, dim: int | None = None) -> np.ndarray:
    """Copy ``values`` into a finite 1-D float64 array."""
    vec = np.array(values, dtype=np.float64).reshape(-1)
    if dim is not None and vec.shape[0] != dim:
        raise ContractViolation(f"expected dimension {dim}, got {vec.shape[0]}")
    if not np.all(np.isfinite(vec)):
        raise ContractViolation("vector has non-finite entries")
    return vec


def weighted_average(vectors: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Return sum(w_i * v_i) / sum(w_i), accumulated in index order.

    The loop is deliberate: results must not depend on how the inputs were
    produced (threads, batching), only on their order.
    """
    if len(vectors) != len(weights):
        raise ContractViolation(
            f"{len(vectors)} vectors but {len(weights)} weights"
        )
    if not vectors:
        raise ContractViolation("weighted_average of an empty list")
    dim = np.shape(vectors[0])
    total = 0.0
    acc = np.zeros(dim, dtype=np.float64)
    for v, w in zip(vectors, weights):
        if np.shape(v) != dim:
            raise ContractViolation(f"dimension mismatch: {np.shape(v)} vs {dim}")
        if w < 0:
            raise ContractViolation("negative weight")
        acc = acc + float(w) * np.asarray(v, dtype=np.float64)
        total += float(w)
    if total == 0.0:
        raise ContractViolation("all weights are zero")
    return acc / total


@dataclass(frozen=True)
class RngStream:
    """A replayable random stream addressed by ``(seed, path)``.

    Streams are backed by numpy's counter-based Philox generator keyed through
    a ``SeedSequence`` whose spawn key is the label path, so any node of the
    (round, client, step) tree can be regenerated without touching its
    siblings.
    """

    seed: int
    path: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed & (2**64 - 1), spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))

    def child(self, label: int) -> "RngStream":
        return derive_stream(self, label)


def derive_stream(root: RngStream, label: int) -> RngStream:
    if label < 0:
        raise ContractViolation("stream labels must be nonnegative")
    return RngStream(root.seed, root.path + (int(label),))
