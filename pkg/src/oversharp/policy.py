"""Softmax policies, group sampling, sampled policy gradients and optimizers.

All updates use ascent orientation: the objective is maximized.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .advantage import AdvantageVector, RolloutBatch
from .mode_space import Distribution, QueryEmbedding, softmax
from .theory import BatchCounts


class LinearSoftmaxPolicy:
    """pi(o | q) = softmax(W e_q)_o with one weight row per mode.

    The logit gradient of (q, o) is the matrix with row o equal to e_q and
    zeros elsewhere, so kernels factor as (e_q . e_q') * [o == o'].
    """

    def __init__(self, weights):
        w = np.array(weights, dtype=float, copy=True)
        if w.ndim != 2:
            raise ValueError("weights must be a (num_modes, dim) matrix")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        self.params = w

    @classmethod
    def zeros(cls, num_modes: int, dim: int) -> "LinearSoftmaxPolicy":
        return cls(np.zeros((num_modes, dim)))

    @property
    def num_modes(self) -> int:
        return self.params.shape[0]

    @property
    def dim(self) -> int:
        return self.params.shape[1]

    def copy(self) -> "LinearSoftmaxPolicy":
        return type(self)(self.params)

    def _vector(self, query: QueryEmbedding) -> np.ndarray:
        if query.dim != self.dim:
            raise ValueError(f"embedding {query.name!r} has dim {query.dim}, weights expect {self.dim}")
        return query.vector

    def logits(self, query: QueryEmbedding) -> np.ndarray:
        return self.params @ self._vector(query)

    def backprop(self, query: QueryEmbedding, logit_grad: np.ndarray) -> np.ndarray:
        return np.outer(logit_grad, self._vector(query))

    def logit_jacobian(self, query: QueryEmbedding, modes: Sequence[int]) -> np.ndarray:
        """Rows are flattened d f(q, o) / d W for each mode in ``modes``."""
        e = self._vector(query)
        jac = np.zeros((len(modes), self.num_modes, self.dim))
        for row, o in enumerate(modes):
            jac[row, o] = e
        return jac.reshape(len(modes), -1)


class TabularPolicy:
    """Free logits per (query, mode); queries never share parameters."""

    def __init__(self, logits, queries: Sequence[str]):
        table = np.array(logits, dtype=float, copy=True)
        if table.ndim != 2 or table.shape[0] != len(queries):
            raise ValueError("logits must be a (num_queries, num_modes) table")
        if not np.all(np.isfinite(table)):
            raise ValueError("logits must be finite")
        self.params = table
        self.queries = tuple(queries)
        self._row = {q: i for i, q in enumerate(self.queries)}

    @classmethod
    def from_distribution(cls, query: str, dist: Distribution) -> "TabularPolicy":
        return cls(np.log(dist.probs)[None, :], [query])

    @property
    def num_modes(self) -> int:
        return self.params.shape[1]

    def copy(self) -> "TabularPolicy":
        return type(self)(self.params, self.queries)

    def _index(self, query) -> int:
        name = query.name if isinstance(query, QueryEmbedding) else query
        try:
            return self._row[name]
        except KeyError:
            raise ValueError(f"unknown query {name!r}") from None

    def logits(self, query) -> np.ndarray:
        return self.params[self._index(query)].copy()

    def backprop(self, query, logit_grad: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(self.params)
        grad[self._index(query)] = logit_grad
        return grad

    def logit_jacobian(self, query, modes: Sequence[int]) -> np.ndarray:
        jac = np.zeros((len(modes),) + self.params.shape)
        for row, o in enumerate(modes):
            jac[row, self._index(query), o] = 1.0
        return jac.reshape(len(modes), -1)


Policy = LinearSoftmaxPolicy | TabularPolicy


def forward(policy: Policy, query) -> tuple[np.ndarray, Distribution]:
    logits = policy.logits(query)
    return logits, Distribution(softmax(logits))


def sample_group(dist: Distribution, group_size: int, rng: np.random.Generator) -> np.ndarray:
    """G categorical draws by inverse CDF over the canonical mode order."""
    if group_size < 1:
        raise ValueError(f"group size must be >= 1, got {group_size}")
    cdf = np.cumsum(dist.probs)
    cdf[-1] = 1.0
    u = rng.random(group_size)
    return np.searchsorted(cdf, u, side="right")


def _kl_logit_grad(probs: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """d KL(softmax(f) || ref) / d f."""
    support = probs > 0
    if np.any(ref[support] <= 0):
        raise ValueError("KL term undefined: policy has mass where pi_ref is 0")
    log_ratio = np.zeros_like(probs)
    log_ratio[support] = np.log(probs[support]) - np.log(ref[support])
    kl = float((probs * log_ratio).sum())
    return probs * (log_ratio - kl)


def pg_logit_gradient(
    probs: np.ndarray,
    batch: RolloutBatch,
    adv: AdvantageVector,
    kl: tuple[float, Distribution] | None = None,
) -> np.ndarray:
    """Logit-space ascent direction of (1/G) sum_s A_s log pi(o_s) - beta KL."""
    if len(adv) != batch.group_size:
        raise ValueError(f"{len(adv)} advantages for a group of {batch.group_size}")
    weight = np.bincount(batch.samples, weights=adv.values, minlength=probs.size)
    grad = (weight - adv.values.sum() * probs) / batch.group_size
    if kl is not None:
        beta, ref = kl
        if beta:
            grad = grad - beta * _kl_logit_grad(probs, ref.probs)
    return grad


def pg_gradient(
    policy: Policy,
    query,
    batch: RolloutBatch,
    adv: AdvantageVector,
    kl: tuple[float, Distribution] | None = None,
) -> np.ndarray:
    _, dist = forward(policy, query)
    return policy.backprop(query, pg_logit_gradient(dist.probs, batch, adv, kl))


def pg_objective(
    policy: Policy,
    query,
    batch: RolloutBatch,
    adv: AdvantageVector,
    kl: tuple[float, Distribution] | None = None,
) -> float:
    """The scalar whose parameter gradient :func:`pg_gradient` returns."""
    logits = policy.logits(query)
    shifted = logits - logits.max()
    log_probs = shifted - np.log(np.exp(shifted).sum())
    value = float(adv.values @ log_probs[list(batch.samples)]) / batch.group_size
    if kl is not None and kl[0]:
        beta, ref = kl
        p = np.exp(log_probs)
        value -= beta * float((p * (log_probs - np.log(ref.probs))).sum())
    return value


def mirror_step(
    log_probs: np.ndarray,
    pi_ref: Distribution,
    counts: BatchCounts,
    advantages,
    beta: float,
    step_size: float,
) -> Distribution:
    """One functional ascent step on tabular log-probabilities.

    Adds step_size times the derivative of the batch objective with respect
    to pi(o) to log pi(o), then renormalizes.
    """
    a = np.asarray(advantages, dtype=float)
    linear = np.where(counts.sampled, counts.counts * a, 0.0) / counts.group_size
    grad = linear - beta * (log_probs - np.log(pi_ref.probs) + 1.0)
    return Distribution.from_logits(log_probs + step_size * grad)


class OptimizerKind(str, enum.Enum):
    SGD = "sgd"
    MOMENTUM = "momentum"
    ADAMW = "adamw"


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class OptimizerState:
    kind: OptimizerKind
    learning_rate: float
    momentum_coeff: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    first_moment: np.ndarray | None = field(default=None, repr=False)
    second_moment: np.ndarray | None = field(default=None, repr=False)
    step_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", OptimizerKind(self.kind))
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum_coeff < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum_coeff}")

    @classmethod
    def create(cls, kind, learning_rate: float, shape, **kwargs) -> "OptimizerState":
        kind = OptimizerKind(kind)
        first = second = None
        if kind is not OptimizerKind.SGD:
            first = np.zeros(shape)
        if kind is OptimizerKind.ADAMW:
            second = np.zeros(shape)
        return cls(kind, learning_rate, first_moment=first, second_moment=second, **kwargs)


def optimizer_step(state: OptimizerState, params: np.ndarray, grad: np.ndarray) -> tuple[np.ndarray, OptimizerState]:
    """Apply one ascent step; returns new parameters and new state."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    if not np.all(np.isfinite(grad)):
        bad = np.argwhere(~np.isfinite(grad))
        raise NonFiniteGradientError(
            f"non-finite gradient at step {state.step_count}: {len(bad)} entries, first at index "
            f"{tuple(bad[0])} = {grad[tuple(bad[0])]}"
        )
    lr = state.learning_rate
    t = state.step_count + 1

    if state.kind is OptimizerKind.SGD:
        return params + lr * grad, replace(state, step_count=t)

    if state.kind is OptimizerKind.MOMENTUM:
        buf = state.momentum_coeff * state.first_moment + grad
        return params + lr * buf, replace(state, first_moment=buf, step_count=t)

    b1, b2 = state.betas
    m = b1 * state.first_moment + (1 - b1) * grad
    v = b2 * state.second_moment + (1 - b2) * grad**2
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    decayed = params * (1 - lr * state.weight_decay)
    new_params = decayed + lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, first_moment=m, second_moment=v, step_count=t)
