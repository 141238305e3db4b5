"""Mode spaces, probability vectors over modes, and the sharpening classifier."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SIMPLEX_TOL = 1e-9
SHARPENING_TOL = 1e-12


class Label(enum.Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"


class Sharpening(enum.Enum):
    MODERATE = "moderate"
    OVER = "over"


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ModeSpace:
    """K1 correct modes followed by K2 incorrect modes.

    Indices are stable: ``0..K1-1`` are correct, ``K1..K1+K2-1`` incorrect.
    ``names`` is optional and only used for readable output.
    """

    num_correct: int
    num_incorrect: int
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.num_correct < 1:
            raise ValueError(f"need at least one correct mode, got K1={self.num_correct}")
        if self.num_incorrect < 0:
            raise ValueError(f"K2 must be non-negative, got {self.num_incorrect}")
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))
            if len(self.names) != self.size:
                raise ValueError(f"{len(self.names)} names for {self.size} modes")

    @classmethod
    def from_rewards(cls, names: Sequence[str], correct: Sequence[str]) -> tuple["ModeSpace", np.ndarray]:
        """Canonical mode space for an arbitrary label list.

        Returns the space and the permutation ``order`` such that
        ``x[order]`` puts a per-label vector ``x`` in canonical order.
        """
        correct = set(correct)
        unknown = correct - set(names)
        if unknown:
            raise ValueError(f"correct labels not in mode list: {sorted(unknown)}")
        first = [i for i, n in enumerate(names) if n in correct]
        rest = [i for i, n in enumerate(names) if n not in correct]
        order = np.array(first + rest, dtype=int)
        space = cls(len(first), len(rest), tuple(names[i] for i in order))
        return space, order

    @property
    def size(self) -> int:
        return self.num_correct + self.num_incorrect

    @property
    def labels(self) -> tuple[Label, ...]:
        return (Label.CORRECT,) * self.num_correct + (Label.INCORRECT,) * self.num_incorrect

    @property
    def correct_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        mask[: self.num_correct] = True
        return mask

    def is_correct(self, index: int) -> bool:
        return 0 <= index < self.num_correct


@dataclass(frozen=True)
class Distribution:
    """A probability vector over modes.

    Construction validates the simplex: entries in [0, 1] and a total
    within ``SIMPLEX_TOL`` of one. The stored array is read-only.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = _readonly(self.probs)
        if p.ndim != 1 or p.size == 0:
            raise ValueError(f"probabilities must be a non-empty vector, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError(f"probabilities outside [0, 1]: {p}")
        total = float(p.sum())
        if abs(total - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_logits(cls, logits) -> "Distribution":
        return cls(softmax(logits))

    @classmethod
    def uniform(cls, k: int) -> "Distribution":
        return cls(np.full(k, 1.0 / k))

    def __len__(self) -> int:
        return self.probs.size

    def __getitem__(self, index):
        return self.probs[index]


@dataclass(frozen=True)
class QueryEmbedding:
    name: str
    vector: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = _readonly(self.vector)
        if v.ndim != 1:
            raise ValueError(f"embedding {self.name!r} must be a vector")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"embedding {self.name!r} has non-finite entries")
        object.__setattr__(self, "vector", v)

    @property
    def dim(self) -> int:
        return self.vector.size


@dataclass(frozen=True)
class AdvantageSpec:
    """Shared advantages for correct (``a_plus``) and incorrect (``a_minus``) modes."""

    a_plus: float
    a_minus: float
    beta: float

    def __post_init__(self):
        if not self.a_plus >= 0:
            raise ValueError(f"a_plus must be >= 0, got {self.a_plus}")
        if not self.a_minus < 0:
            raise ValueError(f"a_minus must be < 0, got {self.a_minus}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")

    def vector(self, modes: ModeSpace) -> np.ndarray:
        return np.where(modes.correct_mask, self.a_plus, self.a_minus)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def classify_sharpening(
    pi_new: Distribution, pi_ref: Distribution, modes: ModeSpace, tol: float = SHARPENING_TOL
) -> Sharpening:
    if not (len(pi_new) == len(pi_ref) == modes.size):
        raise ValueError(
            f"dimension mismatch: pi_new={len(pi_new)}, pi_ref={len(pi_ref)}, modes={modes.size}"
        )
    k1 = modes.num_correct
    dropped = pi_new.probs[:k1] < pi_ref.probs[:k1] - tol
    return Sharpening.OVER if dropped.any() else Sharpening.MODERATE


def entropy(pi: Distribution) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = pi.probs[pi.probs > 0]
    return float(-(p * np.log(p)).sum())


# Toy softmax classifier: labels and fixed 4-dim features.
TOY_LABELS = ("Cat", "Persian", "Dog", "Siamese")

TOY_EMBEDDINGS = {
    "Cat": (0.5, 0.5, 0.5, 0.1),
    "Persian": (0.75, 0.5, 0.25, 0.1),
    "Dog": (0.1, 0.1, 0.1, 0.9),
    "Siamese": (0.25, 0.5, 0.75, 0.1),
}

# Siamese embedding variants, ordered by decreasing similarity to Persian.
SIAMESE_VARIANTS = {
    "high": (0.25, 0.5, 0.75, 0.1),
    "mid": (0.1, 0.5, 0.9, 0.1),
    "low": (0.0, 0.5, 1.0, 0.1),
}


def toy_embeddings(variant: str = "high") -> dict[str, QueryEmbedding]:
    vectors = dict(TOY_EMBEDDINGS)
    try:
        vectors["Siamese"] = SIAMESE_VARIANTS[variant.lower()]
    except KeyError:
        raise ValueError(f"unknown similarity variant {variant!r}") from None
    return {name: QueryEmbedding(name, np.array(v)) for name, v in vectors.items()}

