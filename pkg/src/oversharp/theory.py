"""Closed-form KL-regularized policies, the batch partition function and its bounds.

Everything is computed in log space with max-subtraction so small ``beta``
does not overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mode_space import Distribution, ModeSpace


@dataclass(frozen=True)
class BatchCounts:
    """Per-mode sample counts N_i for one group of G rollouts."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=float, copy=True)
        if c.ndim != 1:
            raise ValueError("counts must be a vector")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ValueError(f"counts must be finite and non-negative: {c}")
        if c.sum() <= 0:
            raise ValueError("group size G must be >= 1")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_samples(cls, samples: Sequence[int], num_modes: int) -> "BatchCounts":
        return cls(np.bincount(np.asarray(samples, dtype=int), minlength=num_modes))

    @property
    def group_size(self) -> float:
        return float(self.counts.sum())

    @property
    def sampled(self) -> np.ndarray:
        return self.counts > 0


@dataclass(frozen=True)
class ZPrimeReport:
    z_prime: float
    general_lower_bound: float
    binary_lower_bound: float | None
    delta_pi: float | None
    # sigma == 0: the binary bound is the p+(1-p+)/sigma -> 0 limit, i.e. exactly 1
    degenerate: bool = False

    @property
    def suppresses_unsampled(self) -> bool:
        return self.z_prime > 1.0


def _check_beta(beta: float) -> None:
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta}")


def _log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def _tilt(pi_ref: Distribution, exponent: np.ndarray) -> tuple[np.ndarray, float]:
    """Normalize ``pi_ref * exp(exponent)``; returns (probs, log partition)."""
    if exponent.shape != pi_ref.probs.shape:
        raise ValueError(f"advantage length {exponent.size} != {len(pi_ref)} modes")
    if not np.all(np.isfinite(exponent)):
        raise ValueError("advantages must be finite")
    logits = _log(pi_ref.probs) + exponent
    shift = logits[np.isfinite(logits)].max()
    w = np.exp(logits - shift)
    total = w.sum()
    return w / total, float(shift + math.log(total))


def optimal_policy(pi_ref: Distribution, advantages, beta: float) -> Distribution:
    """pi*(o) proportional to pi_ref(o) exp(A(o) / beta)."""
    _check_beta(beta)
    probs, _ = _tilt(pi_ref, np.asarray(advantages, dtype=float) / beta)
    return Distribution(probs)


def partition_function(pi_ref: Distribution, advantages, beta: float) -> float:
    _check_beta(beta)
    return math.exp(_tilt(pi_ref, np.asarray(advantages, dtype=float) / beta)[1])


def _batch_exponent(counts: BatchCounts, advantages, beta: float, n: int) -> np.ndarray:
    _check_beta(beta)
    if counts.counts.size != n:
        raise ValueError(f"counts cover {counts.counts.size} modes, policy has {n}")
    a = np.asarray(advantages, dtype=float)
    # unsampled modes carry no exponent whatever their nominal advantage
    return np.where(counts.sampled, counts.counts * a, 0.0) / (beta * counts.group_size)


def batch_optimal_policy(pi_ref: Distribution, counts: BatchCounts, advantages, beta: float) -> Distribution:
    """pi_hat(o_i) proportional to pi_ref(o_i) exp(N_i A_i / (beta G))."""
    exponent = _batch_exponent(counts, advantages, beta, len(pi_ref))
    return Distribution(_tilt(pi_ref, exponent)[0])


def batch_partition_function(pi_ref: Distribution, counts: BatchCounts, advantages, beta: float) -> float:
    exponent = _batch_exponent(counts, advantages, beta, len(pi_ref))
    return math.exp(_tilt(pi_ref, exponent)[1])


def general_z_bound(pi_ref: Distribution, counts: BatchCounts, advantages, beta: float) -> float:
    """First-order lower bound 1 + (1/beta G) sum_i N_i A_i pi_ref(o_i).

    With shared advantages this is the A+ / |A-| form over sampled correct
    and incorrect modes.
    """
    _check_beta(beta)
    a = np.asarray(advantages, dtype=float)
    weighted = np.where(counts.sampled, counts.counts * a * pi_ref.probs, 0.0)
    return 1.0 + float(weighted.sum()) / (beta * counts.group_size)


def z_prime_report(
    pi_ref: Distribution,
    counts: BatchCounts,
    modes: ModeSpace,
    advantages,
    beta: float,
    binary_stats: tuple[float, float] | None = None,
    atol: float = 1e-9,
) -> ZPrimeReport:
    if modes.size != len(pi_ref):
        raise ValueError(f"mode space has {modes.size} modes, pi_ref has {len(pi_ref)}")
    a = np.asarray(advantages, dtype=float)
    z = batch_partition_function(pi_ref, counts, a, beta)
    general = general_z_bound(pi_ref, counts, a, beta)
    if binary_stats is None:
        return ZPrimeReport(z, general, None, None)

    p_plus, sigma = binary_stats
    sampled_pos = counts.sampled & modes.correct_mask
    sampled_neg = counts.sampled & ~modes.correct_mask
    if sigma == 0:
        return ZPrimeReport(z, general, 1.0, None, degenerate=True)

    a_plus, a_minus = (1 - p_plus) / sigma, -p_plus / sigma
    if not (np.allclose(a[sampled_pos], a_plus, atol=atol) and np.allclose(a[sampled_neg], a_minus, atol=atol)):
        raise ValueError(
            "advantages are not the normalized binary pair "
            f"A+={a_plus:.6g}, A-={a_minus:.6g} on sampled modes"
        )
    delta = float(pi_ref.probs[sampled_pos].min() - pi_ref.probs[sampled_neg].max())
    binary = 1.0 + p_plus * (1 - p_plus) * delta / (beta * sigma)
    return ZPrimeReport(z, general, binary, delta)


def geometric_interpolation(pi_t: Distribution, pi_hat: Distribution, eta_beta: float) -> Distribution:
    """Normalized pi_t^(1 - eta_beta) * pi_hat^eta_beta."""
    if not 0.0 <= eta_beta <= 1.0:
        raise ValueError(f"eta_beta must lie in [0, 1], got {eta_beta}")
    if len(pi_t) != len(pi_hat):
        raise ValueError("distributions differ in dimension")
    if np.any(pi_t.probs <= 0) or np.any(pi_hat.probs <= 0):
        raise ValueError("geometric interpolation needs strictly positive distributions")
    log_mix = (1.0 - eta_beta) * np.log(pi_t.probs) + eta_beta * np.log(pi_hat.probs)
    return Distribution.from_logits(log_mix)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) with 0 log 0 = 0; raises if p puts mass where q has none."""
    support = p > 0
    if np.any(q[support] <= 0):
        raise ValueError("KL undefined: p > 0 where reference is 0")
    return float((p[support] * (np.log(p[support]) - np.log(q[support]))).sum())


def empirical_objective(pi, pi_ref: Distribution, counts: BatchCounts, advantages, beta: float) -> float:
    """Batch objective sum_i (N_i/G) A_i pi(o_i) - beta KL(pi || pi_ref).

    ``pi`` may be any non-negative vector (finite-difference probes step off
    the simplex). Its unique maximizer over the simplex is
    ``batch_optimal_policy``.
    """
    p = pi.probs if isinstance(pi, Distribution) else np.asarray(pi, dtype=float)
    if p.shape != pi_ref.probs.shape:
        raise ValueError("pi and pi_ref differ in dimension")
    if np.any(p < 0):
        raise ValueError("pi must be non-negative")
    a = np.asarray(advantages, dtype=float)
    linear = float(np.where(counts.sampled, counts.counts * a * p, 0.0).sum()) / counts.group_size
    return linear - beta * kl_divergence(p, pi_ref.probs)


def objective_gradient(pi, pi_ref: Distribution, counts: BatchCounts, advantages, beta: float) -> np.ndarray:
    """Coordinate-wise derivative of :func:`empirical_objective` in pi."""
    p = pi.probs if isinstance(pi, Distribution) else np.asarray(pi, dtype=float)
    a = np.asarray(advantages, dtype=float)
    linear = np.where(counts.sampled, counts.counts * a, 0.0) / counts.group_size
    return linear - beta * (np.log(p) - np.log(pi_ref.probs) + 1.0)


def inverse_probability_advantages(advantages, pi_ref: Distribution) -> np.ndarray:
    """Idealized reweighting A_k / pi_ref(o_k)."""
    return np.asarray(advantages, dtype=float) / pi_ref.probs
