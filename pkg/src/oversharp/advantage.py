"""Group advantage estimators and inverse-success advantage calibration (IAC)."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .theory import BatchCounts


class Estimator(str, enum.Enum):
    RAW = "raw"
    MEAN_SHIFTED = "mean_shifted"
    NORMALIZED = "normalized"
    RLOO = "rloo"
    REINFORCE_PP = "reinforce_pp"



@dataclass(frozen=True)
class RolloutBatch:
    """G sampled mode indices for one query, with their binary rewards."""

    query: str
    samples: tuple[int, ...]
    rewards: tuple[float, ...]
    num_modes: int

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(int(s) for s in self.samples))
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))
        if len(self.samples) != len(self.rewards):
            raise ValueError(f"{len(self.samples)} samples but {len(self.rewards)} rewards")
        if not self.samples:
            raise ValueError("a rollout batch needs at least one sample")
        if any(not 0 <= s < self.num_modes for s in self.samples):
            raise ValueError(f"sample index outside 0..{self.num_modes - 1}")

    @classmethod
    def from_reward_table(cls, query: str, samples: Sequence[int], reward_of_mode, num_modes: int) -> "RolloutBatch":
        reward_of_mode = np.asarray(reward_of_mode, dtype=float)
        return cls(query, tuple(samples), tuple(reward_of_mode[list(samples)]), num_modes)

    @property
    def group_size(self) -> int:
        return len(self.samples)

    @cached_property
    def reward_array(self) -> np.ndarray:
        return np.array(self.rewards)

    @cached_property
    def counts(self) -> BatchCounts:
        return BatchCounts.from_samples(self.samples, self.num_modes)

    @property
    def success_set(self) -> tuple[int, ...]:
        return tuple(i for i, r in enumerate(self.rewards) if r == 1.0)

    @property
    def failure_set(self) -> tuple[int, ...]:
        return tuple(i for i, r in enumerate(self.rewards) if r != 1.0)

    @property
    def p_plus(self) -> float:
        return float(self.reward_array.mean())

    @property
    def sigma(self) -> float:
        # population std; equals sqrt(p+(1 - p+)) for binary rewards
        return float(self.reward_array.std())


@dataclass(frozen=True)
class AdvantageVector:
    values: np.ndarray
    estimator: Estimator
    # all-equal rewards under a normalizing estimator: zero signal
    degenerate: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if not np.all(np.isfinite(v)):
            raise ValueError("advantages must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "estimator", Estimator(self.estimator))

    def __len__(self) -> int:
        return self.values.size

    def per_mode(self, batch: RolloutBatch) -> np.ndarray:
        """Advantage of each sampled mode (0 for unsampled ones).

        Samples of the same mode share a reward, so every estimator here
        assigns them the same advantage; the last one wins otherwise.
        """
        out = np.zeros(batch.num_modes)
        out[list(batch.samples)] = self.values
        return out


def estimate_advantages(
    batch: RolloutBatch,
    estimator: Estimator | str,
    global_stats: tuple[float, float] | None = None,
) -> AdvantageVector:
    estimator = Estimator(estimator)
    r = batch.reward_array
    g = r.size

    if estimator is Estimator.RAW:
        return AdvantageVector(r, estimator)
    if estimator is Estimator.MEAN_SHIFTED:
        return AdvantageVector(r - r.mean(), estimator)
    if estimator is Estimator.NORMALIZED:
        std = r.std()
        if std == 0:
            return AdvantageVector(np.zeros(g), estimator, degenerate=True)
        return AdvantageVector((r - r.mean()) / std, estimator)
    if estimator is Estimator.RLOO:
        if g < 2:
            raise ValueError("RLOO needs a group of at least 2 samples")
        baseline = (r.sum() - r) / (g - 1)
        return AdvantageVector(r - baseline, estimator)
    if estimator is Estimator.REINFORCE_PP:
        if global_stats is None:
            raise ValueError("reinforce_pp needs (mean, std) aggregated over the training batch")
        mean, std = global_stats
        if std == 0:
            return AdvantageVector(np.zeros(g), estimator, degenerate=True)
        return AdvantageVector((r - mean) / std, estimator)
    raise AssertionError(estimator)


def global_reward_stats(batches: Sequence[RolloutBatch]) -> tuple[float, float]:
    """Mean and population std of rewards pooled over every group in a step."""
    pooled = np.concatenate([b.reward_array for b in batches])
    return float(pooled.mean()), float(pooled.std())


def iac_scale(batch: RolloutBatch, alpha: float) -> float:
    """Positive-advantage multiplier (G - |S+|)^alpha."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    return float((batch.group_size - len(batch.success_set)) ** alpha)


def iac_calibrate(adv: AdvantageVector, batch: RolloutBatch, alpha: float) -> AdvantageVector:
    if len(adv) != batch.group_size:
        raise ValueError(f"{len(adv)} advantages for a group of {batch.group_size}")
    scale = iac_scale(batch, alpha)
    values = np.where(adv.values > 0, adv.values * scale, adv.values)
    return AdvantageVector(values, adv.estimator, adv.degenerate)
