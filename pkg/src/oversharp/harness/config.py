"""Experiment configuration: a flat mapping of documented keys plus an optional grid."""

from __future__ import annotations

import dataclasses
import enum
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..advantage import Estimator
from ..mode_space import TOY_EMBEDDINGS, TOY_LABELS, SIAMESE_VARIANTS
from ..policy import OptimizerKind

DEFAULT_LR = 0.1
DEFAULT_SEEDS = tuple(range(20))
# With mean-over-group gradients and the fixed toy features, SGD at 0.1 moves
# the Cat/Persian logit gap by ~0.03 per step and never collapses within 500
# steps. 3.0 is the smallest rate tried at which every raw-estimator run
# collapses within 500 steps for G in {2, 4, 8}.
TOY_SGD_LR = 3.0
# Adam-style updates are scale-free, so AdamW keeps its conventional rate.
TOY_ADAMW_LR = 0.1


class Experiment(str, enum.Enum):
    SAMPLING_BIAS = "sampling_bias"
    SEMANTIC_COUPLING = "semantic_coupling"
    ESTIMATOR_ABLATION = "estimator_ablation"
    OPTIMIZER_ABLATION = "optimizer_ablation"
    MITIGATION = "mitigation"
    CUSTOM = "custom"


def _default_rewards() -> dict[str, tuple[str, ...]]:
    return {"Persian": ("Cat", "Persian"), "Siamese": ("Cat", "Siamese")}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: Experiment = Experiment.SAMPLING_BIAS
    estimator: Estimator = Estimator.RAW
    optimizer: OptimizerKind = OptimizerKind.SGD
    lr: float = DEFAULT_LR
    momentum: float = 0.9
    adam_b1: float = 0.9
    adam_b2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    kl_beta: float = 0.0
    steps: int = 500
    group_size: int = 8
    queries_per_step: int = 1
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    iac_alpha: float = 0.0
    dlc_enabled: bool = False
    dlc_mu: float = 0.5
    memory_lr: float = 0.05
    variant: str = "high"
    train_query: str = "Persian"
    labels: tuple[str, ...] = TOY_LABELS
    # None means the toy embeddings with the selected Siamese variant
    embeddings: Mapping[str, tuple[float, ...]] | None = None
    reward_map: Mapping[str, tuple[str, ...]] = field(default_factory=_default_rewards)
    # "query.mode" pairs; empty means the experiment's defaults
    tracked: tuple[str, ...] = ()
    collapse_threshold: float = 0.99
    collapse_window: int = 50
    # beta for logging Z' when the KL term is off
    zprime_beta: float = 1.0
    snapshot_every: int = 100

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("experiment", Experiment(self.experiment))
        set_("estimator", Estimator(self.estimator))
        set_("optimizer", OptimizerKind(self.optimizer))
        seeds = self.seeds
        if isinstance(seeds, int):
            seeds = tuple(range(seeds))
        set_("seeds", tuple(int(s) for s in seeds))
        set_("labels", tuple(self.labels))
        set_("tracked", tuple(self.tracked))
        set_("reward_map", {q: tuple(m) for q, m in dict(self.reward_map).items()})
        if self.embeddings is not None:
            set_("embeddings", {q: tuple(float(x) for x in v) for q, v in dict(self.embeddings).items()})
        set_("variant", str(self.variant).lower())

        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.group_size < 1 or self.queries_per_step < 1:
            raise ValueError("group_size and queries_per_step must be >= 1")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.variant not in SIAMESE_VARIANTS:
            raise ValueError(f"variant must be one of {sorted(SIAMESE_VARIANTS)}")
        if self.iac_alpha < 0 or self.dlc_mu < 0 or self.kl_beta < 0:
            raise ValueError("iac_alpha, dlc_mu and kl_beta must be non-negative")
        if self.train_query not in self.embedding_vectors():
            raise ValueError(f"train query {self.train_query!r} has no embedding")
        for q, _ in self.tracked_pairs():
            if q not in self.reward_map:
                raise ValueError(f"reward_map does not cover query {q!r}")
        if self.train_query not in self.reward_map:
            raise ValueError(f"reward_map does not cover query {self.train_query!r}")
        for q, modes in self.reward_map.items():
            unknown = set(modes) - set(self.labels)
            if unknown:
                raise ValueError(f"reward_map[{q!r}] names unknown labels {sorted(unknown)}")

    def embedding_vectors(self) -> dict[str, tuple[float, ...]]:
        if self.embeddings is not None:
            return dict(self.embeddings)
        vectors = dict(TOY_EMBEDDINGS)
        vectors["Siamese"] = SIAMESE_VARIANTS[self.variant]
        return vectors

    def tracked_pairs(self) -> list[tuple[str, str]]:
        names = self.tracked
        if not names:
            names = (f"{self.train_query}.{m}" for m in self.reward_map[self.train_query])
            names = tuple(names)
            if self.experiment is Experiment.SEMANTIC_COUPLING:
                names += ("Siamese.Siamese",)
        pairs = []
        for name in names:
            q, _, m = name.partition(".")
            if not m:
                raise ValueError(f"tracked pair {name!r} must look like 'query.mode'")
            pairs.append((q, m))
        return pairs

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, enum.Enum):
                v = v.value
            elif isinstance(v, tuple):
                v = list(v)
            elif isinstance(v, Mapping):
                v = {k: list(x) for k, x in v.items()}
            out[f.name] = v
        return out

    def with_(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known - {"grid"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in data.items() if k != "grid"})


def load_config(path: str | Path) -> tuple[ExperimentConfig, dict[str, list]]:
    """Read a JSON config; returns the base config and its grid section (may be empty)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    grid = data.get("grid", {}) or {}
    return ExperimentConfig.from_mapping(data), _check_grid(grid)


def load_grid(path: str | Path) -> dict[str, list]:
    return _check_grid(json.loads(Path(path).read_text(encoding="utf-8")))


def _check_grid(grid: Mapping[str, Any]) -> dict[str, list]:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"seeds"}
    bad = set(grid) - known
    if bad:
        raise ValueError(f"unknown grid keys: {sorted(bad)}")
    out = {}
    for k, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ValueError(f"grid entry {k!r} must be a non-empty list")
        out[k] = values
    return out


def expand_grid(base: ExperimentConfig, grid: Mapping[str, list]) -> list[ExperimentConfig]:
    """Cartesian product in key order; the first key varies slowest."""
    if not grid:
        return [base]
    keys = list(grid)
    return [base.with_(**dict(zip(keys, combo))) for combo in itertools.product(*(grid[k] for k in keys))]
