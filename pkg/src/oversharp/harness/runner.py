"""Seeded training loops for the toy softmax classifier.

One loop covers every experiment: forward, (calibrated) sampling, rewards,
advantages, optional IAC, policy gradient, optimizer step, then the memory
update when DLC is on. Each run draws randomness only from
``np.random.default_rng(seed)``, so results do not depend on scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..advantage import Estimator, RolloutBatch, estimate_advantages, global_reward_stats, iac_calibrate, iac_scale
from ..dlc import MemoryModel, calibrated_logits, memory_update
from ..mode_space import Distribution, ModeSpace, QueryEmbedding, entropy, softmax
from ..policy import LinearSoftmaxPolicy, OptimizerKind, OptimizerState, optimizer_step, pg_logit_gradient, sample_group
from ..theory import BatchCounts, z_prime_report
from .config import Experiment, ExperimentConfig
from .metrics import detect_collapse, median_collapse

WORKERS_ENV = "OVERSHARP_WORKERS"


@dataclass
class RunRecord:
    config: ExperimentConfig
    seed: int
    columns: tuple[str, ...]  # "query.mode" for each tracked pair
    probs: np.ndarray  # (steps, len(columns)), after each update
    entropy: np.ndarray  # entropy of pi(. | train query) after each update
    z_prime: np.ndarray  # Z' of each step's batch against the pre-update policy
    iac_scale: np.ndarray
    argmax_hits: dict[str, np.ndarray] = field(default_factory=dict)
    memory_snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list)
    collapse_step: int | None = None

    @property
    def steps(self) -> int:
        return self.probs.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.probs[:, self.columns.index(name)]

    @property
    def train_columns(self) -> list[int]:
        prefix = self.config.train_query + "."
        return [i for i, c in enumerate(self.columns) if c.startswith(prefix)]

    @property
    def collapse_series(self) -> np.ndarray:
        return self.probs[:, self.train_columns].max(axis=1)

    @property
    def final_probs(self) -> dict[str, float]:
        return dict(zip(self.columns, self.probs[-1].tolist()))

    @property
    def winner(self) -> str:
        cols = self.train_columns
        best = cols[int(np.argmax(self.probs[-1, cols]))]
        return self.columns[best].partition(".")[2]

    @property
    def final_entropy(self) -> float:
        return float(self.entropy[-1])

    @property
    def collapse_flags(self) -> np.ndarray:
        flags = np.zeros(self.steps, dtype=int)
        if self.collapse_step is not None:
            flags[self.collapse_step:] = 1
        return flags


def _reward_table(config: ExperimentConfig, query: str) -> np.ndarray:
    correct = set(config.reward_map[query])
    return np.array([1.0 if m in correct else 0.0 for m in config.labels])


def _make_optimizer(config: ExperimentConfig, shape) -> OptimizerState:
    return OptimizerState.create(
        config.optimizer,
        config.lr,
        shape,
        momentum_coeff=config.momentum,
        betas=(config.adam_b1, config.adam_b2),
        eps=config.adam_eps,
        weight_decay=config.weight_decay,
    )


def simulate(config: ExperimentConfig, seed: int) -> RunRecord:
    rng = np.random.default_rng(seed)
    labels = config.labels
    m = len(labels)
    embeddings = {q: QueryEmbedding(q, np.array(v)) for q, v in config.embedding_vectors().items()}
    query = embeddings[config.train_query]
    rewards = _reward_table(config, config.train_query)
    modes, order = ModeSpace.from_rewards(labels, config.reward_map[config.train_query])

    policy = LinearSoftmaxPolicy.zeros(m, query.dim)
    opt = _make_optimizer(config, policy.params.shape)
    kl = None
    if config.kl_beta > 0:
        kl = (config.kl_beta, Distribution(softmax(policy.logits(query))))
    memory = MemoryModel.zeros(m, query.dim) if config.dlc_enabled else None
    log_beta = config.kl_beta if config.kl_beta > 0 else config.zprime_beta

    pairs = config.tracked_pairs()
    columns = tuple(f"{q}.{o}" for q, o in pairs)
    pair_idx = [(embeddings[q], labels.index(o)) for q, o in pairs]
    hit_queries = [q for q, o in pairs if q != config.train_query and q == o]

    steps = config.steps
    probs_log = np.empty((steps, len(pairs)))
    ent_log = np.empty(steps)
    z_log = np.full(steps, np.nan)
    scale_log = np.empty(steps)
    hits = {q: np.empty(steps, dtype=int) for q in hit_queries}
    snapshots = []

    for t in range(steps):
        logits = policy.logits(query)
        probs = softmax(logits)
        if memory is not None:
            sample_dist = Distribution(softmax(calibrated_logits(logits, memory.logits(query), config.dlc_mu)))
        else:
            sample_dist = Distribution(probs)

        batches = []
        for _ in range(config.queries_per_step):
            samples = sample_group(sample_dist, config.group_size, rng)
            batches.append(RolloutBatch.from_reward_table(config.train_query, samples, rewards, m))
        stats = global_reward_stats(batches) if config.estimator is Estimator.REINFORCE_PP else None

        logit_grad = np.zeros(m)
        for b, batch in enumerate(batches):
            adv = estimate_advantages(batch, config.estimator, stats)
            adv = iac_calibrate(adv, batch, config.iac_alpha)
            logit_grad += pg_logit_gradient(probs, batch, adv, kl)
            if b == 0:
                scale_log[t] = iac_scale(batch, config.iac_alpha)
                per_mode = adv.per_mode(batch)
                report = z_prime_report(
                    Distribution(probs[order]), BatchCounts(batch.counts.counts[order]),
                    modes, per_mode[order], log_beta,
                )
                z_log[t] = report.z_prime
        logit_grad /= len(batches)

        params, opt = optimizer_step(opt, policy.params, policy.backprop(query, logit_grad))
        policy.params = params

        if memory is not None:
            observed = [(query, int(s)) for batch in batches for s in batch.samples]
            memory = memory_update(memory, observed, config.memory_lr)
            if t % config.snapshot_every == 0 or t == steps - 1:
                snapshots.append((t, softmax(memory.logits(query))))

        for j, (q, o) in enumerate(pair_idx):
            probs_log[t, j] = softmax(policy.logits(q))[o]
        ent_log[t] = entropy(Distribution(softmax(policy.logits(query))))
        for q in hit_queries:
            hits[q][t] = int(np.argmax(policy.logits(embeddings[q])) == labels.index(q))

    record = RunRecord(config, seed, columns, probs_log, ent_log, z_log, scale_log, hits, snapshots)
    record.collapse_step = detect_collapse(record.collapse_series, config.collapse_threshold, config.collapse_window)
    return record


def _simulate_task(task: tuple[ExperimentConfig, int]) -> RunRecord:
    return simulate(*task)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def run_many(configs: Sequence[ExperimentConfig], workers: int | None = None) -> list[RunRecord]:
    """Run every (config, seed) pair; output is ordered by config then seed."""
    tasks = [(c, s) for c in configs for s in sorted(c.seeds)]
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1 or len(tasks) == 1:
        return [simulate(c, s) for c, s in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_simulate_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def run_sampling_bias(config: ExperimentConfig, workers: int | None = None) -> list[RunRecord]:
    return run_many([config.with_(experiment=Experiment.SAMPLING_BIAS)], workers)


def run_semantic_coupling(config: ExperimentConfig, workers: int | None = None) -> list[RunRecord]:
    return run_many([config.with_(experiment=Experiment.SEMANTIC_COUPLING)], workers)


def run_mitigation(config: ExperimentConfig, workers: int | None = None) -> list[RunRecord]:
    if not (config.iac_alpha > 0 or config.dlc_enabled):
        raise ValueError("mitigation runs need iac_alpha > 0 and/or dlc_enabled")
    return run_many([config.with_(experiment=Experiment.MITIGATION)], workers)


def run_optimizer_ablation(
    config: ExperimentConfig,
    optimizers: Sequence[str] = ("sgd", "momentum", "adamw"),
    group_sizes: Sequence[int] = (2, 4, 8),
    workers: int | None = None,
) -> dict[tuple[str, int], float]:
    """Median collapse step per (optimizer, G); +inf when most runs never collapse."""
    base = config.with_(experiment=Experiment.OPTIMIZER_ABLATION)
    configs = [base.with_(optimizer=o, group_size=g) for o in optimizers for g in group_sizes]
    records = run_many(configs, workers)
    table = {}
    for c in configs:
        key = (OptimizerKind(c.optimizer).value, c.group_size)
        table[key] = median_collapse(r.collapse_step for r in records if r.config == c)
    return table
