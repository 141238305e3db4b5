"""Acceptance criteria 1 to 12.

Each test prints exactly one line ``PASS criterion N: ...`` or
``FAIL criterion N: ...`` and then asserts. Tolerances, trial counts and
runtime limits are pinned below. Run directly with
``python3 tests/test_acceptance.py`` or through pytest.
"""

import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from oversharp.coupling import (
    KernelEnvelope, SeenMode, TargetShiftVector, UnseenMode, exact_logit_shift, logit_shift_bound,
    structured_kernel,
)
from oversharp.harness import csvio, verify
from oversharp.harness.config import TOY_ADAMW_LR, TOY_SGD_LR, ExperimentConfig, expand_grid, load_config
from oversharp.harness.metrics import area_under_curve, median_collapse
from oversharp.harness.runner import run_many, run_optimizer_ablation

SEED = verify.DEFAULT_SEED
SEEDS = tuple(range(20))

# criteria 1 to 6 and 11: trial counts, tolerances, runtime limits (seconds)
C1_TRIALS, C1_SECONDS = 10_000, 10.0
C2_TRIALS, C2_TV_TOL, C2_GRAD_TOL, C2_SECONDS = 1_000, 1e-4, 1e-7, 60.0
C3_TRIALS, C3_SECONDS = 10_000, 10.0
C4_TRIALS, C4_TOL = 1_000, 1e-10
C5_TRIALS = 10_000
C6_TRIALS, C6_TOL = 1_000, 1e-12
C11_TRIALS, C11_REL_TOL = 100, 1e-5

# criterion 7: literal settings
C7_LR, C7_STEPS, C7_SECONDS = 0.1, 500, 120.0
# criterion 9
C9_MOMENTUM_TARGET, C9_MOMENTUM_MAX, C9_LONG_STEPS = 20, 40, 2000
# criterion 10
C10_STEPS, C10_MIN_RATIO, C10_MIN_HELD = 2000, 1.5, 0.8
# criterion 12: steps per run when replaying every shipped config
C12_STEPS, C12_SEEDS = 200, (0, 1, 2, 3)

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def verdict(capsys):
    def report(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail

    return report


def fmt_median(x: float) -> str:
    return "never" if math.isinf(x) else f"{x:g}"


def toy(**kwargs) -> ExperimentConfig:
    base = dict(seeds=SEEDS, group_size=8, steps=500)
    base.update(kwargs)
    return ExperimentConfig(**base)


def test_criterion_01_moderate_sharpening(verdict):
    r = verify.check_moderate_sharpening(C1_TRIALS, SEED)
    ok = r.failures == 0 and r.seconds < C1_SECONDS
    verdict(1, ok, f"{r.trials - r.failures}/{r.trials} tilted optima classified moderate in {r.seconds:.2f}s "
                   f"(limit {C1_SECONDS:g}s)")


def test_criterion_02_batch_optimum(verdict):
    r = verify.check_batch_optimal(C2_TRIALS, SEED, tv_tol=C2_TV_TOL, grad_tol=C2_GRAD_TOL)
    ok = r.failures == 0 and r.seconds < C2_SECONDS
    verdict(2, ok, f"{r.failures} of {r.trials} instances outside TV {C2_TV_TOL:g} / projected gradient "
                   f"{C2_GRAD_TOL:g}; {r.detail}; {r.seconds:.1f}s (limit {C2_SECONDS:g}s)")


def test_criterion_03_z_prime_bounds(verdict):
    r = verify.check_z_prime_bounds(C3_TRIALS, SEED)
    ok = r.failures == 0 and r.seconds < C3_SECONDS
    verdict(3, ok, f"{r.failures} violations over {r.trials} batches (both bounds, Z'>1 and suppression when "
                   f"the gap is positive); {r.seconds:.2f}s (limit {C3_SECONDS:g}s)")


def test_criterion_04_mirror_step_interpolation(verdict):
    r = verify.check_interpolation(C4_TRIALS, SEED, tol=C4_TOL)
    verdict(4, r.failures == 0 and r.worst < C4_TOL,
            f"max deviation {r.worst:.3g} over {r.trials} instances (tolerance {C4_TOL:g})")


def test_criterion_05_logit_shift_bounds(verdict):
    K = structured_kernel(2.0, 1.0, 2)
    y = TargetShiftVector([1.0, 0.0])
    env = KernelEnvelope.uniform(2.0, 1.0)
    worked = (
        exact_logit_shift(K, K[0], y), logit_shift_bound(env, y, SeenMode(0, 1)),
        exact_logit_shift(K, [1.0, 1.0], y), logit_shift_bound(env, y, UnseenMode()),
    )
    worked_ok = np.allclose(worked, [1.0, 2 / 3, 1 / 3, 1 / 3], rtol=0, atol=1e-12)
    r = verify.check_logit_bounds(C5_TRIALS, SEED)
    verdict(5, worked_ok and r.failures == 0,
            f"{r.failures} bracket violations over {r.trials} structured instances; worked G=2 case "
            f"seen {worked[0]:.6g} >= {worked[1]:.6g}, unseen {worked[2]:.6g} <= {worked[3]:.6g}")


def test_criterion_06_idealized_reweighting(verdict):
    r = verify.check_idealized_iac(C6_TRIALS, SEED, tol=C6_TOL)
    verdict(6, r.failures == 0 and r.worst < C6_TOL,
            f"max |bound - 1| = {r.worst:.3g} over {r.trials} zero-sum batches (tolerance {C6_TOL:g})")


def test_criterion_07_sampling_bias(verdict):
    start = time.perf_counter()
    base = toy(lr=C7_LR, steps=C7_STEPS, optimizer="sgd", experiment="sampling_bias")
    configs = expand_grid(base, {"estimator": ["raw", "mean_shifted", "normalized"], "group_size": [2, 4, 8]})
    records = run_many(configs)
    seconds = time.perf_counter() - start
    med = {}
    raw_g8 = []
    for c in configs:
        steps = [r.collapse_step for r in records if r.config == c]
        med[(c.estimator.value, c.group_size)] = median_collapse(steps)
        if c.estimator.value == "raw" and c.group_size == 8:
            raw_g8 = steps
    collapsed = sum(s is not None for s in raw_g8)
    by_est = [med[(e, 8)] for e in ("raw", "mean_shifted", "normalized")]
    by_g = [med[("raw", g)] for g in (2, 4, 8)]
    # strict orderings over finite medians; "never" ties with "never"
    est_order = by_est[0] < by_est[1] < by_est[2]
    g_order = by_g[0] < by_g[1] < by_g[2]
    ok = collapsed == len(SEEDS) and est_order and g_order and seconds < C7_SECONDS
    verdict(7, ok,
            f"lr={C7_LR:g}: raw G=8 collapsed {collapsed}/{len(SEEDS)}; medians raw/mean_shifted/normalized "
            f"{'/'.join(map(fmt_median, by_est))}; raw G=2/4/8 {'/'.join(map(fmt_median, by_g))}; {seconds:.0f}s")


def test_criterion_08_semantic_coupling(verdict):
    base = toy(lr=TOY_SGD_LR, estimator="normalized", experiment="semantic_coupling")
    configs = expand_grid(base, {"variant": ["high", "mid", "low"], "group_size": [2, 4, 8]})
    records = run_many(configs)
    final, auc = {}, {}
    for c in configs:
        rs = [r for r in records if r.config == c]
        key = (c.variant, c.group_size)
        final[key] = float(np.median([r.column("Siamese.Siamese")[-1] for r in rs]))
        auc[key] = float(np.median([area_under_curve(r.column("Siamese.Siamese")) for r in rs]))
    variant_ok = all(final[("high", g)] < final[("mid", g)] < final[("low", g)] for g in (2, 4, 8))
    g_ok = all(auc[(v, 2)] > auc[(v, 4)] > auc[(v, 8)] for v in ("high", "mid", "low"))
    finals = "/".join(f"{final[(v, 8)]:.4f}" for v in ("high", "mid", "low"))
    aucs = "; ".join(f"{v} " + "/".join(f"{auc[(v, g)]:.4f}" for g in (2, 4, 8)) for v in ("high", "mid", "low"))
    verdict(8, variant_ok and g_ok,
            f"median final pi(Siamese|Siamese) high/mid/low at G=8 {finals}; median AUC over G=2/4/8: {aucs}")


def test_criterion_09_optimizers_and_estimators(verdict):
    table = run_optimizer_ablation(toy(lr=TOY_SGD_LR, estimator="raw"), group_sizes=(8,))
    sgd, momentum, adamw = (table[(o, 8)] for o in ("sgd", "momentum", "adamw"))
    long_runs = expand_grid(toy(lr=TOY_SGD_LR, steps=C9_LONG_STEPS, experiment="estimator_ablation"),
                            {"estimator": ["rloo", "reinforce_pp"]})
    records = run_many(long_runs)
    counts = {c.estimator.value: sum(r.collapse_step is not None for r in records if r.config == c)
              for c in long_runs}
    ok = momentum <= C9_MOMENTUM_MAX and adamw < sgd and all(n == len(SEEDS) for n in counts.values())
    verdict(9, ok,
            f"G=8 medians SGD {fmt_median(sgd)}, Momentum {fmt_median(momentum)} (target < {C9_MOMENTUM_TARGET}, "
            f"limit {C9_MOMENTUM_MAX}), AdamW {fmt_median(adamw)}; collapsed within {C9_LONG_STEPS} steps: "
            f"RLOO {counts['rloo']}/{len(SEEDS)}, Reinforce++ {counts['reinforce_pp']}/{len(SEEDS)}")


def test_criterion_10_mitigation(verdict):
    base = toy(lr=TOY_SGD_LR, estimator="raw", steps=C10_STEPS, experiment="mitigation")
    plain, iac = run_many([base]), run_many([base.with_(iac_alpha=1.0)])
    ratio = median_collapse(r.collapse_step for r in iac) / median_collapse(r.collapse_step for r in plain)

    both = dict(iac_alpha=1.0, dlc_enabled=True, dlc_mu=0.5)
    held = {}
    for name, opt, lr in (("SGD", "sgd", TOY_SGD_LR), ("AdamW", "adamw", TOY_ADAMW_LR)):
        rs = run_many([base.with_(optimizer=opt, lr=lr, **both)])
        held[name] = sum(r.collapse_step is None for r in rs) / len(rs)

    neutral = run_many([base.with_(dlc_enabled=True, dlc_mu=0.0, iac_alpha=0.0)])
    identical = all(np.array_equal(a.probs, b.probs) and np.array_equal(a.entropy, b.entropy)
                    and np.array_equal(a.z_prime, b.z_prime, equal_nan=True) for a, b in zip(plain, neutral))
    adam = base.with_(optimizer="adamw", lr=TOY_ADAMW_LR, steps=500)
    identical &= all(np.array_equal(a.probs, b.probs) for a, b in zip(
        run_many([adam]), run_many([adam.with_(dlc_enabled=True, dlc_mu=0.0, iac_alpha=0.0)])))

    ok = ratio >= C10_MIN_RATIO and min(held.values()) >= C10_MIN_HELD and identical
    verdict(10, ok,
            f"IAC/baseline median collapse ratio {ratio:.2f} (need >= {C10_MIN_RATIO}); IAC+DLC runs without "
            f"collapse in {C10_STEPS} steps: SGD {held['SGD']:.0%}, AdamW {held['AdamW']:.0%} (need >= "
            f"{C10_MIN_HELD:.0%}); neutral settings bit-identical: {identical}")


def test_criterion_11_gradient_integrity(verdict):
    r = verify.check_pg_gradient(C11_TRIALS, SEED, rel_tol=C11_REL_TOL)
    verdict(11, r.failures == 0 and r.worst < C11_REL_TOL,
            f"max relative error {r.worst:.3g} over {r.trials} configurations incl. KL (tolerance {C11_REL_TOL:g})")


def test_criterion_12_determinism(verdict, tmp_path):
    workers = max(2, os.cpu_count() or 1)
    mismatched, files = [], 0
    for path in sorted(CONFIG_DIR.glob("*.json")):
        config, grid = load_config(path)
        configs = expand_grid(config.with_(steps=C12_STEPS, seeds=C12_SEEDS), grid)
        index = [i for i, c in enumerate(configs) for _ in c.seeds]
        dirs = []
        for label, w in (("a", 1), ("b", 1), ("c", workers)):
            out = tmp_path / path.stem / label
            csvio.emit_csv(run_many(configs, workers=w), out, index)
            dirs.append(out)
        names = sorted(p.name for p in dirs[0].iterdir())
        for d in dirs[1:]:
            if sorted(p.name for p in d.iterdir()) != names:
                mismatched.append(f"{path.stem}: file sets differ")
            for name in names:
                files += 1
                if (d / name).read_bytes() != (dirs[0] / name).read_bytes():
                    mismatched.append(f"{path.stem}/{name}")
    verdict(12, not mismatched,
            f"{files} file comparisons over the shipped configs ({C12_STEPS} steps, seeds {list(C12_SEEDS)}), "
            f"serial twice and {workers} workers; {len(mismatched)} mismatches")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
