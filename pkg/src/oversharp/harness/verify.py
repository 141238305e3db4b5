"""Randomized oracle checks for the closed forms, bounds and gradients.

Each check draws its own instances from a seeded generator, compares the
library against an independent computation (numerical optimization, direct
linear solves, finite differences, hand-derived values) and reports the
worst discrepancy. ``run_checks`` drives the ``verify`` CLI command.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from ..advantage import Estimator, RolloutBatch, estimate_advantages
from ..coupling import (
    KernelEnvelope, SeenMode, TargetShiftVector, UnseenMode, alignment_stats,
    exact_logit_shift, logit_shift_bound, structured_kernel, structured_solve, suppression_ratio,
)
from ..mode_space import (
    AdvantageSpec, Distribution, ModeSpace, QueryEmbedding, SIAMESE_VARIANTS, Sharpening,
    TOY_EMBEDDINGS, TOY_LABELS, classify_sharpening, softmax,
)
from ..policy import LinearSoftmaxPolicy, TabularPolicy, mirror_step, pg_gradient, pg_objective
from ..theory import (
    BatchCounts, batch_optimal_policy, empirical_objective, general_z_bound, geometric_interpolation,
    inverse_probability_advantages, optimal_policy, z_prime_report,
)

DEFAULT_SEED = 20240601


@dataclass(frozen=True)
class CheckResult:
    name: str
    trials: int
    failures: int
    worst: float  # largest observed discrepancy (meaning depends on the check)
    seconds: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.failures == 0


def _timed(name: str, trials: int, body: Callable[[], tuple[int, float, str]]) -> CheckResult:
    start = time.perf_counter()
    failures, worst, detail = body()
    return CheckResult(name, trials, failures, worst, time.perf_counter() - start, detail)


# ---------------------------------------------------------------- instances

def random_simplex(rng: np.random.Generator, k: int, floor: float = 0.0) -> np.ndarray:
    """Dirichlet(1) point, optionally mixed with uniform to keep entries >= floor."""
    p = rng.dirichlet(np.ones(k))
    if floor > 0:
        p = (1 - k * floor) * p + floor
    return p / p.sum()


def random_mode_space(rng: np.random.Generator, max_correct: int = 4, max_incorrect: int = 4) -> ModeSpace:
    return ModeSpace(int(rng.integers(1, max_correct + 1)), int(rng.integers(1, max_incorrect + 1)))


def random_binary_batch(rng: np.random.Generator, pi: np.ndarray, modes: ModeSpace, group_size: int):
    """Sample G modes from pi; returns (counts, RolloutBatch) with reward 1 on correct modes."""
    samples = rng.choice(modes.size, size=group_size, p=pi)
    rewards = modes.correct_mask.astype(float)
    batch = RolloutBatch.from_reward_table("q", samples, rewards, modes.size)
    return batch.counts, batch


# ------------------------------------------------------------- theory checks

def check_moderate_sharpening(trials: int = 10_000, seed: int = DEFAULT_SEED) -> CheckResult:
    """Tilting by a binary advantage never lowers a correct mode."""
    rng = np.random.default_rng(seed)

    def body():
        failures, worst = 0, 0.0
        for _ in range(trials):
            modes = random_mode_space(rng)
            pi_ref = Distribution(random_simplex(rng, modes.size))
            spec = AdvantageSpec(rng.uniform(0, 3), -rng.uniform(1e-3, 3), rng.uniform(0.05, 5))
            pi_star = optimal_policy(pi_ref, spec.vector(modes), spec.beta)
            drop = float(np.max(pi_ref.probs[: modes.num_correct] - pi_star.probs[: modes.num_correct]))
            worst = max(worst, drop)
            if classify_sharpening(pi_star, pi_ref, modes) is not Sharpening.MODERATE:
                failures += 1
        return failures, worst, "worst = largest correct-mode drop"

    return _timed("moderate_sharpening", trials, body)


def _numerical_maximizer(pi_ref: np.ndarray, counts: BatchCounts, adv: np.ndarray, beta: float) -> np.ndarray:
    """Maximize the empirical objective over softmax logits with BFGS.

    Gradients come from central finite differences of the objective itself,
    so the oracle shares nothing with the closed form.
    """
    ref = Distribution(pi_ref)

    def neg(z):
        return -empirical_objective(softmax(z), ref, counts, adv, beta)

    def neg_grad(z, h=1e-6):
        g = np.empty_like(z)
        for i in range(z.size):
            e = np.zeros_like(z)
            e[i] = h
            g[i] = (neg(z + e) - neg(z - e)) / (2 * h)
        return g

    z0 = np.log(pi_ref)
    res = minimize(neg, z0, jac=neg_grad, method="BFGS", options={"gtol": 1e-11, "maxiter": 500})
    return softmax(res.x)


def projected_fd_gradient(pi: np.ndarray, pi_ref: Distribution, counts: BatchCounts, adv, beta: float, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of the objective, projected onto the simplex tangent space."""
    g = np.empty(pi.size)
    for i in range(pi.size):
        e = np.zeros(pi.size)
        e[i] = h
        g[i] = (empirical_objective(pi + e, pi_ref, counts, adv, beta)
                - empirical_objective(pi - e, pi_ref, counts, adv, beta)) / (2 * h)
    return g - g.mean()


def check_batch_optimal(trials: int = 1_000, seed: int = DEFAULT_SEED, tv_tol: float = 1e-4, grad_tol: float = 1e-7) -> CheckResult:
    """The closed-form batch policy maximizes the empirical objective."""
    rng = np.random.default_rng(seed)

    def body():
        failures, worst_tv, worst_grad = 0, 0.0, 0.0
        for _ in range(trials):
            k = int(rng.integers(2, 7))
            pi_ref = Distribution(random_simplex(rng, k, floor=0.2 / k))
            g = int(rng.integers(1, 17))
            counts = BatchCounts(rng.multinomial(g, pi_ref.probs))
            adv = rng.uniform(-1, 1, size=k)
            beta = rng.uniform(1, 2)
            closed = batch_optimal_policy(pi_ref, counts, adv, beta).probs
            numeric = _numerical_maximizer(pi_ref.probs, counts, adv, beta)
            tv = 0.5 * float(np.abs(closed - numeric).sum())
            grad = float(np.linalg.norm(projected_fd_gradient(closed, pi_ref, counts, adv, beta)))
            worst_tv, worst_grad = max(worst_tv, tv), max(worst_grad, grad)
            if not (tv < tv_tol and grad < grad_tol):
                failures += 1
        return failures, worst_tv, f"worst TV {worst_tv:.3g} (tol {tv_tol}), worst projected gradient {worst_grad:.3g} (tol {grad_tol})"

    return _timed("batch_optimal_policy", trials, body)


# Z' and its bounds are sums of a few terms of size <= e^|x|; comparisons allow
# a handful of ulps so that exact ties (e.g. all-zero advantages) are not flagged.
ULP_TOL = 8 * np.finfo(float).eps
UNIT_TOL = 1e-12


def _dominates(z: float, bound: float) -> bool:
    return z >= bound - ULP_TOL * max(1.0, abs(bound))


def check_z_prime_bounds(trials: int = 10_000, seed: int = DEFAULT_SEED) -> CheckResult:
    """Z' dominates both lower bounds; a positive gap forces suppression of unsampled modes."""
    rng = np.random.default_rng(seed)

    def body():
        failures, worst = 0, -math.inf
        gap_cases = 0
        for _ in range(trials):
            modes = random_mode_space(rng)
            pi_ref = Distribution(random_simplex(rng, modes.size))
            g = int(rng.integers(1, 17))
            counts, batch = random_binary_batch(rng, pi_ref.probs, modes, g)
            beta = rng.uniform(0.1, 5)
            adv = estimate_advantages(batch, Estimator.NORMALIZED).per_mode(batch)
            stats = (batch.p_plus, batch.sigma)
            rep = z_prime_report(pi_ref, counts, modes, adv, beta, binary_stats=stats)
            ok = _dominates(rep.z_prime, rep.general_lower_bound)
            worst = max(worst, rep.general_lower_bound - rep.z_prime)
            if rep.binary_lower_bound is not None:
                ok &= _dominates(rep.z_prime, rep.binary_lower_bound)
                worst = max(worst, rep.binary_lower_bound - rep.z_prime)
            # same batch under arbitrary per-mode advantages: the general bound still holds
            free = rng.uniform(-3, 3, size=modes.size)
            z_free = z_prime_report(pi_ref, counts, modes, free, beta)
            ok &= _dominates(z_free.z_prime, z_free.general_lower_bound)
            pi_hat = batch_optimal_policy(pi_ref, counts, adv, beta).probs
            unsampled = ~counts.sampled
            if rep.delta_pi is not None and rep.delta_pi > 0 and batch.sigma > 0:
                gap_cases += 1
                ok &= rep.z_prime > 1
                ok &= bool(np.all(pi_hat[unsampled] < pi_ref.probs[unsampled]))
            # |Z' - 1| at rounding level means Z' = 1: unsampled modes keep their mass
            if rep.z_prime > 1 + UNIT_TOL:
                ok &= bool(np.all(pi_hat[unsampled] < pi_ref.probs[unsampled]))
            elif rep.z_prime < 1 - UNIT_TOL:
                ok &= bool(np.all(pi_hat[unsampled] > pi_ref.probs[unsampled]))
            failures += not ok
        return failures, worst, f"worst = max(bound - Z'); {gap_cases} instances with positive gap"

    return _timed("z_prime_bounds", trials, body)


def check_interpolation(trials: int = 1_000, seed: int = DEFAULT_SEED, tol: float = 1e-10) -> CheckResult:
    """An exact functional mirror step equals geometric interpolation toward the batch optimum."""
    rng = np.random.default_rng(seed)

    def body():
        failures, worst = 0, 0.0
        for _ in range(trials):
            k = int(rng.integers(2, 8))
            pi_t = Distribution(random_simplex(rng, k, floor=1e-3))
            pi_ref = Distribution(random_simplex(rng, k, floor=1e-3))
            g = int(rng.integers(1, 17))
            counts = BatchCounts(rng.multinomial(g, pi_t.probs))
            adv = rng.uniform(-2, 2, size=k)
            beta = rng.uniform(0.1, 3)
            eta_beta = rng.uniform(0, 1)
            stepped = mirror_step(np.log(pi_t.probs), pi_ref, counts, adv, beta, eta_beta / beta)
            pi_hat = batch_optimal_policy(pi_ref, counts, adv, beta)
            target = geometric_interpolation(pi_t, pi_hat, eta_beta)
            err = float(np.max(np.abs(stepped.probs - target.probs)))
            worst = max(worst, err)
            failures += not err < tol
        return failures, worst, f"max abs difference (tol {tol})"

    return _timed("mirror_step_interpolation", trials, body)


def check_idealized_iac(trials: int = 1_000, seed: int = DEFAULT_SEED, tol: float = 1e-12) -> CheckResult:
    """Dividing zero-sum advantages by pi_ref makes the general Z' bound exactly 1."""
    rng = np.random.default_rng(seed)

    def body():
        failures, worst = 0, 0.0
        for _ in range(trials):
            modes = random_mode_space(rng)
            pi_ref = Distribution(random_simplex(rng, modes.size, floor=1e-3 / modes.size))
            g = int(rng.integers(2, 17))
            counts, batch = random_binary_batch(rng, pi_ref.probs, modes, g)
            adv = estimate_advantages(batch, Estimator.MEAN_SHIFTED).per_mode(batch)
            reweighted = inverse_probability_advantages(adv, pi_ref)
            bound = general_z_bound(pi_ref, counts, reweighted, rng.uniform(0.1, 5))
            err = abs(bound - 1.0)
            worst = max(worst, err)
            failures += not err < tol
        return failures, worst, f"max |bound - 1| (tol {tol})"

    return _timed("idealized_iac_bound", trials, body)


def check_pg_gradient(trials: int = 100, seed: int = DEFAULT_SEED, rel_tol: float = 1e-5) -> CheckResult:
    """Analytic policy gradient against central finite differences, with and without KL."""
    rng = np.random.default_rng(seed)
    estimators = list(Estimator)

    def body():
        failures, worst = 0, 0.0
        for i in range(trials):
            k, d = int(rng.integers(2, 6)), int(rng.integers(2, 6))
            tabular = i % 3 == 0
            if tabular:
                policy = TabularPolicy(rng.normal(size=(1, k)), ["q"])
                query = "q"
            else:
                policy = LinearSoftmaxPolicy(rng.normal(size=(k, d)))
                query = QueryEmbedding("q", rng.normal(size=d))
            g = int(rng.integers(2, 9))
            samples = rng.integers(0, k, size=g)
            rewards = (rng.random(k) < 0.5).astype(float)
            batch = RolloutBatch.from_reward_table("q", samples, rewards, k)
            est = estimators[i % len(estimators)]
            stats = (batch.p_plus, batch.sigma) if est is Estimator.REINFORCE_PP else None
            adv = estimate_advantages(batch, est, stats)
            if not np.any(adv.values):
                adv = type(adv)(rng.normal(size=g), est)
            kl = (rng.uniform(0.1, 2), Distribution(random_simplex(rng, k, floor=0.05 / k))) if i % 2 else None
            analytic = pg_gradient(policy, query, batch, adv, kl)
            numeric = np.zeros_like(policy.params)
            base = policy.params.copy()
            h = 1e-6
            for idx in np.ndindex(base.shape):
                for sign in (1, -1):
                    p = base.copy()
                    p[idx] += sign * h
                    policy.params = p
                    numeric[idx] += sign * pg_objective(policy, query, batch, adv, kl) / (2 * h)
            policy.params = base
            scale = max(np.linalg.norm(numeric), 1e-8)
            rel = float(np.linalg.norm(analytic - numeric) / scale)
            worst = max(worst, rel)
            failures += not rel < rel_tol
        return failures, worst, f"max relative error (tol {rel_tol})"

    return _timed("pg_gradient_fd", trials, body)


# ----------------------------------------------------------- coupling checks

def structured_instance(rng: np.random.Generator, max_group: int = 16, num_modes: int = 6):
    """Random (lambda, rho, eta, samples, y) with y constant across repeats of a mode."""
    lam = rng.uniform(0.5, 5)
    rho = rng.uniform(0.01, 0.99) * lam
    eta = rng.uniform(0, 1)
    g = int(rng.integers(1, max_group + 1))
    samples = rng.integers(0, num_modes, size=g)
    per_mode = rng.uniform(0, 2, size=num_modes) * (rng.random(num_modes) < 0.85)
    y = TargetShiftVector(per_mode[samples])
    return lam, rho, eta, samples, y


def seen_cross_vector(lam: float, rho: float, eta: float, samples: np.ndarray, mode: int) -> np.ndarray:
    """Cross vector of a coupled pair whose mode appears in the batch: eta*lam at its positions, eta*rho elsewhere."""
    return eta * np.where(samples == mode, lam, rho)


def check_logit_bounds(trials: int = 10_000, seed: int = DEFAULT_SEED, rtol: float = 1e-9) -> CheckResult:
    """Bounds bracket the exact min-norm shift on structured kernels, plus the worked G=2 case."""
    rng = np.random.default_rng(seed)

    def body():
        failures, worst = 0, -math.inf
        # worked example: M(2, 1), y = [1, 0]
        K = structured_kernel(2.0, 1.0, 2)
        y = TargetShiftVector([1.0, 0.0])
        env = KernelEnvelope.uniform(2.0, 1.0)
        seen_exact = exact_logit_shift(K, K[0], y)
        unseen_exact = exact_logit_shift(K, [1.0, 1.0], y)
        worked = (
            math.isclose(seen_exact, 1.0, abs_tol=1e-12)
            and math.isclose(logit_shift_bound(env, y, SeenMode(0, 1)), 2 / 3, abs_tol=1e-12)
            and math.isclose(unseen_exact, 1 / 3, abs_tol=1e-12)
            and math.isclose(logit_shift_bound(env, y, UnseenMode()), 1 / 3, abs_tol=1e-12)
            and math.isclose(suppression_ratio(env, y, 0, 1)[1], 2.0, abs_tol=1e-12)
        )
        failures += not worked

        for _ in range(trials):
            lam, rho, eta, samples, y = structured_instance(rng)
            g = len(y)
            K = structured_kernel(lam, rho, g)
            env = KernelEnvelope.uniform(lam, rho, eta)
            scale = max(1.0, eta * lam * y.total)
            ok = np.allclose(structured_solve(lam, rho, y.values), np.linalg.solve(K, y.values), rtol=1e-9, atol=1e-12)

            exact = exact_logit_shift(K, np.full(g, eta * rho), y)
            bound = logit_shift_bound(env, y, UnseenMode())
            worst = max(worst, (exact - bound) / scale)
            ok &= exact <= bound + rtol * scale

            k = int(rng.integers(g))
            mode = samples[k]
            count = int((samples == mode).sum())
            exact = exact_logit_shift(K, seen_cross_vector(lam, rho, eta, samples, mode), y)
            bound = logit_shift_bound(env, y, SeenMode(k, count))
            worst = max(worst, (bound - exact) / scale)
            ok &= exact >= bound - rtol * scale
            failures += not ok
        return failures, worst, f"worked G=2 case {'ok' if worked else 'FAILED'}; worst scaled violation"

    return _timed("logit_shift_bounds", trials, body)


def check_suppression_ratio(trials: int = 10_000, seed: int = DEFAULT_SEED, tol: float = 1e-9) -> CheckResult:
    """On uniform envelopes the general ratio equals the simplified closed form."""
    rng = np.random.default_rng(seed)

    def body():
        failures, worst = 0, 0.0
        for _ in range(trials):
            lam, rho, eta, samples, y = structured_instance(rng)
            if y.total == 0:
                continue
            env = KernelEnvelope.uniform(lam, rho, max(eta, 1e-3))
            k = int(rng.integers(len(y)))
            count = int((samples == samples[k]).sum())
            general, simplified = suppression_ratio(env, y, k, count)
            err = abs(general - simplified) / max(1.0, abs(simplified))
            worst = max(worst, err)
            failures += not err < tol
        return failures, worst, f"max relative |general - simplified| (tol {tol})"

    return _timed("suppression_ratio", trials, body)


ALIGNMENT_FIELDS = (
    "source", "target", "variant", "min_inner", "mean_inner", "lambda_min", "lambda_max",
    "rho_min", "rho_max", "eta_hat", "nonneg_aligned", "diagonally_dominant", "eta_in_range",
)


def toy_alignment_rows(weights: np.ndarray | None = None) -> list[list[object]]:
    """Assumption checks on the toy classifier: Persian source, each Siamese variant as target."""
    policy = LinearSoftmaxPolicy(np.zeros((len(TOY_LABELS), 4)) if weights is None else weights)
    source = QueryEmbedding("Persian", np.array(TOY_EMBEDDINGS["Persian"]))
    modes = [TOY_LABELS.index("Cat"), TOY_LABELS.index("Persian")]
    rows = []
    for variant, vec in SIAMESE_VARIANTS.items():
        rep = alignment_stats(policy, source, QueryEmbedding("Siamese", np.array(vec)), modes)
        e = rep.envelope
        rows.append([
            rep.source, rep.target, variant, rep.min_inner, rep.mean_inner, e.lambda_min, e.lambda_max,
            e.rho_min, e.rho_max, rep.eta_hat, rep.nonneg_aligned, rep.diagonally_dominant, rep.eta_in_range,
        ])
    return rows


def check_toy_alignment(report_path: str | Path | None = None) -> CheckResult:
    """Non-negative alignment, diagonal dominance, and eta decreasing from High to Low similarity."""
    from .csvio import write_table

    def body():
        rows = toy_alignment_rows()
        etas = [r[9] for r in rows]
        flags_ok = all(r[10] and r[11] and r[12] for r in rows)
        decreasing = all(a > b for a, b in zip(etas, etas[1:]))
        if report_path is not None:
            write_table(report_path, ALIGNMENT_FIELDS, rows)
        detail = "eta_hat " + ", ".join(f"{r[2]}={r[9]:.4f}" for r in rows)
        return int(not flags_ok) + int(not decreasing), 0.0, detail

    return _timed("toy_alignment", len(SIAMESE_VARIANTS), body)


# ----------------------------------------------------------------- dispatch

THEORY_CHECKS = {
    "moderate_sharpening": check_moderate_sharpening,
    "batch_optimal_policy": check_batch_optimal,
    "z_prime_bounds": check_z_prime_bounds,
    "mirror_step_interpolation": check_interpolation,
    "idealized_iac_bound": check_idealized_iac,
    "pg_gradient_fd": check_pg_gradient,
}
COUPLING_CHECKS = {
    "logit_shift_bounds": check_logit_bounds,
    "suppression_ratio": check_suppression_ratio,
}


def run_checks(module: str = "all", trials: int | None = None, seed: int = DEFAULT_SEED,
               report_dir: str | Path | None = None) -> list[CheckResult]:
    """Run a group of checks; ``trials`` overrides every check's default count."""
    if module not in ("theory", "coupling", "all"):
        raise ValueError(f"unknown module {module!r}; expected theory, coupling or all")
    kwargs = {"seed": seed}
    if trials is not None:
        if trials < 1:
            raise ValueError("trials must be >= 1")
        kwargs["trials"] = trials
    results = []
    if module in ("theory", "all"):
        results += [fn(**kwargs) for fn in THEORY_CHECKS.values()]
    if module in ("coupling", "all"):
        results += [fn(**kwargs) for fn in COUPLING_CHECKS.values()]
        path = None
        if report_dir is not None:
            Path(report_dir).mkdir(parents=True, exist_ok=True)
            path = Path(report_dir) / "alignment.csv"
        results.append(check_toy_alignment(path))
    return results


def format_results(results: list[CheckResult]) -> str:
    lines = [f"{'check':<28} {'result':<6} {'trials':>7} {'fails':>6} {'worst':>11} {'secs':>7}  detail"]
    for r in results:
        lines.append(
            f"{r.name:<28} {'PASS' if r.passed else 'FAIL':<6} {r.trials:>7} {r.failures:>6} "
            f"{r.worst:>11.3g} {r.seconds:>7.2f}  {r.detail}"
        )
    return "\n".join(lines)
