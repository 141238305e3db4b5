"""Distribution-level calibration: a memory of rollout frequencies that reshapes sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mode_space import Distribution, QueryEmbedding, softmax
from .policy import LinearSoftmaxPolicy


@dataclass(frozen=True)
class CalibrationConfig:
    mu: float = 0.5
    memory_lr: float = 0.05
    memory_optimizer: str = "sgd"

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if not self.memory_lr > 0:
            raise ValueError(f"memory_lr must be > 0, got {self.memory_lr}")
        if self.memory_optimizer != "sgd":
            raise ValueError(f"unsupported memory optimizer {self.memory_optimizer!r}")


class MemoryModel(LinearSoftmaxPolicy):
    """Linear-softmax model of how often each (query, mode) pair was sampled."""

    def distribution(self, query: QueryEmbedding) -> Distribution:
        return Distribution(softmax(self.logits(query)))


def memory_update(
    memory: MemoryModel, observed: Sequence[tuple[QueryEmbedding, int]], lr: float
) -> MemoryModel:
    """One SGD step on the mean cross-entropy of the observed pairs."""
    if not observed:
        raise ValueError("memory update needs at least one observation")
    # group by query so each softmax is computed once
    by_query: dict[int, tuple[QueryEmbedding, list[int]]] = {}
    for query, mode in observed:
        by_query.setdefault(id(query), (query, []))[1].append(mode)
    grad = np.zeros_like(memory.params)
    for query, modes in by_query.values():
        p = softmax(memory.logits(query))
        residual = len(modes) * p - np.bincount(modes, minlength=p.size)
        grad += memory.backprop(query, residual)
    return MemoryModel(memory.params - lr * grad / len(observed))


def calibrated_logits(policy_logits, memory_logits, mu: float) -> np.ndarray:
    """f_theta - mu * f_phi; the caller softmaxes to get the sampling distribution."""
    f = np.asarray(policy_logits, dtype=float)
    m = np.asarray(memory_logits, dtype=float)
    if f.shape != m.shape:
        raise ValueError(f"policy logits {f.shape} vs memory logits {m.shape}")
    return f - mu * m
