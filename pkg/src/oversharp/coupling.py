"""Gradient kernels, min-norm logit shifts, and bounds on cross-query transfer.

A batch update that fits target logit shifts ``y`` with the minimum-norm
parameter change moves the logit of any other pair (q', o') by
``k' . K^{-1} y``, where K is the batch kernel and k' the kernel vector of
(q', o') against the batch. The bounds below sandwich that shift using only
a structured envelope of K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .advantage import AdvantageVector, RolloutBatch
from .mode_space import QueryEmbedding

SINGULAR_COND = 1e12


class SingularKernelError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class KernelEnvelope:
    lambda_min: float
    lambda_max: float
    rho_min: float
    rho_max: float
    eta: float = 1.0

    @classmethod
    def uniform(cls, lam: float, rho: float, eta: float = 1.0) -> "KernelEnvelope":
        return cls(lam, lam, rho, rho, eta)

    @property
    def diagonally_dominant(self) -> bool:
        return self.rho_min <= self.rho_max < self.lambda_min <= self.lambda_max

    def is_uniform(self, tol: float = 1e-9) -> bool:
        return abs(self.lambda_max - self.lambda_min) <= tol and abs(self.rho_max - self.rho_min) <= tol


@dataclass(frozen=True)
class TargetShiftVector:
    """y_s = N_s |A_s| / (beta G) for each sample s."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if np.any(v < 0):
            raise ValueError("target shifts must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_batch(cls, batch: RolloutBatch, adv: AdvantageVector, beta: float) -> "TargetShiftVector":
        if not beta > 0:
            raise ValueError(f"beta must be > 0, got {beta}")
        n = batch.counts.counts[list(batch.samples)]
        return cls(n * np.abs(adv.values) / (beta * batch.group_size))

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class UnseenMode:
    pass


@dataclass(frozen=True)
class SeenMode:
    index: int  # a batch position k holding the mode
    count: int  # N_o', occurrences of the mode in the batch


def structured_kernel(lam: float, rho: float, g: int) -> np.ndarray:
    """M(lambda, rho) = (lambda - rho) I + rho 11^T."""
    return (lam - rho) * np.eye(g) + rho * np.ones((g, g))


def structured_solve(lam: float, rho: float, y) -> np.ndarray:
    """M(lambda, rho)^{-1} y in closed form via Sherman-Morrison."""
    y = np.asarray(y, dtype=float)
    g = y.size
    return (y - rho * y.sum() / (lam + (g - 1) * rho)) / (lam - rho)


def batch_kernel(policy, query: QueryEmbedding, samples: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    if len(samples) == 0:
        raise ValueError("batch must be non-empty")
    jac = policy.logit_jacobian(query, list(samples))
    return jac, jac @ jac.T


def cross_kernel(policy, target: QueryEmbedding, target_mode: int, source: QueryEmbedding, samples: Sequence[int]) -> np.ndarray:
    """Kernel vector of (target, target_mode) against the batch at ``source``."""
    g_target = policy.logit_jacobian(target, [target_mode])[0]
    return policy.logit_jacobian(source, list(samples)) @ g_target


def exact_logit_shift(kernel, k_prime, y, jitter: float = 0.0) -> float:
    K = np.asarray(kernel, dtype=float)
    yv = y.values if isinstance(y, TargetShiftVector) else np.asarray(y, dtype=float)
    g = yv.size
    A = K + jitter * np.eye(g)
    cond = np.linalg.cond(A)
    if not cond < SINGULAR_COND:
        fallback = 1e-8 * np.trace(K) / g
        A = K + (jitter + fallback) * np.eye(g)
        cond = np.linalg.cond(A)
        if not cond < SINGULAR_COND:
            raise SingularKernelError(f"kernel singular even after jitter {jitter + fallback:.3g}: cond={cond:.3g}")
    alpha = np.linalg.solve(A, yv)
    return float(np.asarray(k_prime, dtype=float) @ alpha)


def _require_envelope(env: KernelEnvelope) -> None:
    if not env.diagonally_dominant:
        raise ValueError(
            "envelope violates rho_min <= rho_max < lambda_min <= lambda_max: "
            f"{env.rho_min}, {env.rho_max}, {env.lambda_min}, {env.lambda_max}"
        )


def logit_shift_bound(envelope: KernelEnvelope, y: TargetShiftVector, case: UnseenMode | SeenMode) -> float:
    """Upper bound on the shift of a batch-unseen mode, or lower bound for a seen one."""
    _require_envelope(envelope)
    e = envelope
    g = len(y)
    total = y.total
    if isinstance(case, UnseenMode):
        return e.eta * e.rho_max * total / (e.lambda_min + (g - 1) * e.rho_min)
    if not 0 <= case.index < g:
        raise ValueError(f"seen index {case.index} outside batch of {g}")
    if case.count < 1:
        raise ValueError("a seen mode occurs at least once")
    stiffness = (e.lambda_min - e.rho_min) / (e.lambda_max - e.rho_max)
    leak = e.rho_max * total / (e.lambda_max + (g - 1) * e.rho_max)
    return e.eta * case.count * stiffness * (y.values[case.index] - leak)


def suppression_ratio(envelope: KernelEnvelope, y: TargetShiftVector, k: int, count: int) -> tuple[float, float | None]:
    """Seen-mode lower bound over unseen-mode upper bound.

    Returns the general ratio and, for a uniform envelope, the simplified
    N [(y_k / A_sum)(lambda / rho + G - 1) - 1].
    """
    _require_envelope(envelope)
    total = y.total
    if total == 0:
        raise ZeroDivisionError("suppression ratio undefined when all target shifts are zero")
    e = envelope
    g = len(y)
    if e.rho_max == 0:
        return math.inf, (math.inf if e.is_uniform() else None)
    share = y.values[k] / total
    inner = e.lambda_min + (g - 1) * e.rho_min
    stiffness = (e.lambda_min - e.rho_min) / (e.lambda_max - e.rho_max)
    general = stiffness * count * (share * inner / e.rho_max - inner / (e.lambda_max + (g - 1) * e.rho_max))
    simplified = None
    if e.is_uniform():
        simplified = count * (share * (e.lambda_min / e.rho_min + g - 1) - 1)
    return general, simplified


@dataclass(frozen=True)
class AlignmentReport:
    source: str
    target: str
    modes: tuple[int, ...]
    cross: np.ndarray  # cross[i, j] = grad f(target, o_i) . grad f(source, o_j)
    within: np.ndarray  # kernel at the source query
    envelope: KernelEnvelope
    eta_hat: float

    @property
    def min_inner(self) -> float:
        return float(self.cross.min())

    @property
    def mean_inner(self) -> float:
        return float(self.cross.mean())

    @property
    def nonneg_aligned(self) -> bool:
        return self.min_inner >= 0

    @property
    def diagonally_dominant(self) -> bool:
        return self.envelope.diagonally_dominant

    @property
    def eta_in_range(self) -> bool:
        return 0.0 <= self.eta_hat <= 1.0


def alignment_stats(policy, source: QueryEmbedding, target: QueryEmbedding, modes: Sequence[int]) -> AlignmentReport:
    """Check non-negative alignment, kernel diagonal dominance, and fit eta.

    eta is the least-squares slope of the cross-query kernel against the
    within-query kernel over matched mode lists.
    """
    modes = tuple(modes)
    if len(modes) < 2:
        raise ValueError("need at least two modes")
    j_src = policy.logit_jacobian(source, modes)
    j_tgt = policy.logit_jacobian(target, modes)
    within = j_src @ j_src.T
    cross = j_tgt @ j_src.T
    off = ~np.eye(len(modes), dtype=bool)
    diag = np.diag(within)
    env = KernelEnvelope(float(diag.min()), float(diag.max()), float(within[off].min()), float(within[off].max()))
    denom = float((within**2).sum())
    eta_hat = float((cross * within).sum()) / denom if denom > 0 else 0.0
    env = KernelEnvelope(env.lambda_min, env.lambda_max, env.rho_min, env.rho_max, eta_hat)
    return AlignmentReport(source.name, target.name, modes, cross, within, env, eta_hat)
