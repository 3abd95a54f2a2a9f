"""Acceptance criteria, each checked at its stated tolerance and time budget.

Every test reports a PASS/FAIL line (shown in the "acceptance criteria"
section of the pytest summary) before asserting.
"""

import itertools
import time

import numpy as np
import pytest
from scipy.stats import norm

from helpers import finite_difference_check, toy_problem, unit_space
from oracles import dense_posterior, random_gp_problem
from warmbho import synthbench as sb
from warmbho.acquisition import expected_improvement
from warmbho.bho import run_bho, run_warm_bho, warm_start_init
from warmbho.gp import KernelParams, condition, posterior_batch
from warmbho.history import DatasetRecord, EvaluationGrid, HistoryStore, Instances, subtracted_ccov, target_distance
from warmbho.hyperspace import canonical_cnn_space
from warmbho.metafeature import TrainConfig, compute_metafeatures, embed_dataset, init_wing, train
from warmbho.sampling import halton, latin_hypercube
from warmbho.acquisition import AcquisitionConfig


def test_gp_matches_dense_oracle(acceptance):
    gen = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        X, y, Xq, ls, s2, noise = random_gp_problem(gen, n_max=10, d_max=6)
        m = condition(X, y, KernelParams(ls, s2, noise))
        mu, var = posterior_batch(m, Xq)
        mu_o, var_o = dense_posterior(X, y, Xq, ls, s2, noise)
        worst = max(worst, np.max(np.abs(mu - mu_o)), np.max(np.abs(var - var_o)))
    elapsed = time.perf_counter() - start
    ok = acceptance("GP oracle equivalence", worst <= 1e-8 and elapsed < 5,
                    f"max |diff| {worst:.2e} (tol 1e-8), {elapsed:.2f}s (< 5s), 50 problems")
    assert ok


def test_ei_matches_monte_carlo(acceptance):
    start = time.perf_counter()
    z = np.random.default_rng(7).standard_normal(10**6)
    worst = 0.0
    for mu, sigma, best in itertools.product(
        np.linspace(-0.5, 0.5, 5), [0.01, 0.05, 0.1, 0.2, 0.3], [-0.2, 0.0, 0.2]
    ):
        mc = float(np.mean(np.maximum(0.0, best - (mu + sigma * z))))
        worst = max(worst, abs(expected_improvement(mu, sigma, best) - mc))
    elapsed = time.perf_counter() - start
    ok = acceptance("EI correctness", worst <= 1e-3 and elapsed < 30,
                    f"max |EI - MC| {worst:.2e} (tol 1e-3) over 5x5x3 grid, 1e6 draws, {elapsed:.1f}s (< 30s)")
    assert ok


def test_sampling_properties(acceptance):
    gen = np.random.default_rng(99)
    strat_ok = 0
    for _ in range(100):
        d, k, seed = int(gen.integers(1, 7)), int(gen.integers(1, 51)), int(gen.integers(0, 2**31))
        pts = latin_hypercube(d, k, seed).points
        strat_ok += all(
            np.array_equal(np.sort(np.floor(k * pts[:, i]).astype(int)), np.arange(k)) for i in range(d)
        ) and bool(np.all((pts >= 0) & (pts < 1)))
    first = halton(1, 4).points[:, 0].tolist()
    ok = acceptance("Sampling properties", strat_ok == 100 and first == [0.5, 0.25, 0.75, 0.125],
                    f"LHS stratified {strat_ok}/100, Halton base-2 head {first}")
    assert ok


def test_metric_learner_gradient_check(acceptance):
    start = time.perf_counter()
    w, groups, pairs, d = toy_problem()
    err = finite_difference_check(w, groups, pairs, d, entries=40, step=1e-5)
    elapsed = time.perf_counter() - start
    ok = acceptance("Metric-learner gradient check", err <= 1e-4 and elapsed < 10,
                    f"max relative error {err:.2e} (tol 1e-4) on the 2-record 4-instance store, {elapsed:.1f}s (< 10s)")
    assert ok


def test_distance_matching_converges(acceptance):
    store = sb.make_realizable_store()
    start = time.perf_counter()
    res = train(store, TrainConfig(iterations=2000))
    elapsed = time.perf_counter() - start
    train_ratio = res.final_train_loss / res.initial_train_loss
    val_drop = 1 - res.final_val_loss / res.initial_val_loss
    ok = acceptance(
        "Distance-matching convergence",
        train_ratio <= 0.10 and val_drop >= 0.80 and elapsed < 120,
        f"train loss {res.initial_train_loss:.3g} -> {res.final_train_loss:.3g} ({100 * train_ratio:.2f}% of initial, <= 10%), "
        f"held-out pair loss reduced {100 * val_drop:.1f}% (>= 80%), {elapsed:.0f}s (< 120s)",
    )
    assert ok


def test_embedding_permutation_invariance(acceptance):
    gen = np.random.default_rng(5)
    w = init_wing(8, 5, seed=3)
    data, labels = gen.normal(size=(150, 8)), gen.integers(0, 5, 150)
    base = embed_dataset(w, Instances(data, labels), tau=200)
    worst = 0.0
    for _ in range(100):
        p = gen.permutation(150)
        worst = max(worst, float(np.max(np.abs(embed_dataset(w, Instances(data[p], labels[p]), tau=200) - base))))
    ok = acceptance("Permutation invariance", worst <= 1e-6, f"max deviation {worst:.2e} over 100 permutations (tol 1e-6)")
    assert ok


def test_target_distance_is_a_metric(acceptance):
    gen = np.random.default_rng(11)
    n, K = 64, 60
    grid = EvaluationGrid(gen.random((n, 2)), unit_space(2))
    inst = Instances(np.zeros((1, 1)), [0])
    store = HistoryStore(grid, tuple(DatasetRecord(f"r{i}", gen.random(n), inst) for i in range(K)))
    ids = store.ids
    worst_sym = worst_id = worst_tri = 0.0
    for _ in range(1000):
        i, j, k = (ids[x] for x in gen.integers(0, K, 3))
        dij, dji = target_distance(store, i, j), target_distance(store, j, i)
        worst_sym = max(worst_sym, abs(dij - dji))
        worst_id = max(worst_id, target_distance(store, i, i))
        worst_tri = max(worst_tri, dij - (target_distance(store, i, k) + target_distance(store, k, j)))
    ok = acceptance("Metric-space properties of target_distance",
                    worst_sym <= 1e-12 and worst_id <= 1e-12 and worst_tri <= 1e-12,
                    f"symmetry {worst_sym:.1e}, identity {worst_id:.1e}, triangle excess {max(worst_tri, 0):.1e} on 1000 triples")
    assert ok


def test_warm_start_dominance(acceptance):
    start = time.perf_counter()
    store, _ = sb.make_collection()
    held = sb.make_heldout()
    wing = train(store, TrainConfig()).wing
    cmp = sb.compare_initializations(store, held, wing, methods=sb.BASELINES + ("warmstart",),
                                     acqs=("ei", "ucb"), k=3, T=15, seeds=range(5))
    elapsed = time.perf_counter() - start
    assert not cmp.failures
    wins = {}
    details = []
    for acq in ("ei", "ucb"):
        wins[acq] = 0
        for task in held:
            med = {m: float(np.median(cmp.final_best(task.id, m, acq))) for m in sb.BASELINES + ("warmstart",)}
            won = all(med["warmstart"] <= med[b] for b in sb.BASELINES)
            wins[acq] += won
            details.append(f"{acq}/{task.id} warm {med['warmstart']:.3f} vs best baseline "
                           f"{min(med[b] for b in sb.BASELINES):.3f}{'' if won else ' (lost)'}")
    ok = acceptance(
        "End-to-end warm-start dominance",
        wins["ei"] >= 3 and wins["ucb"] >= 3 and elapsed < 900,
        f"EI {wins['ei']}/4, UCB {wins['ucb']}/4 tasks (need >= 3 each), {elapsed:.0f}s (< 900s); " + "; ".join(details),
    )
    assert ok


def test_warm_and_plain_loops_are_bit_identical(acceptance):
    space = canonical_cnn_space()
    spec = sb.CollectionSpec(family_count=3, fractions=(0.3, 0.6, 1.0), instances_per_task=60)
    store, _ = sb.make_collection(spec, space)
    task = sb.make_heldout(spec, space, count=1)[0]
    wing = init_wing(8, 5, seed=0)
    store = store.with_metafeatures(compute_metafeatures(wing, store, 200, 0))
    target = lambda v: sb.evaluate_task(task, space, v)  # noqa: E731
    same = 0
    for seed in range(3):
        for kind in ("ei", "ucb"):
            acq = AcquisitionConfig(kind=kind, seed=seed)
            warm = run_warm_bho(wing, store, task.instances(), target, space, k=3, T=8, acq=acq)
            init = warm_start_init(wing, store, task.instances(), k=3)
            plain = run_bho(target, space, init, 8, acq, method_tag="warmstart")
            same += [v.tobytes() for v in warm.vectors] == [v.tobytes() for v in plain.vectors] and (
                np.asarray(warm.errors).tobytes() == np.asarray(plain.errors).tobytes()
            )
    ok = acceptance("Plain/warm loop parity", same == 6, f"{same}/6 trace pairs bit-identical")
    assert ok


def test_ccov_sign_pattern(acceptance):
    # two records with low-error modes at opposite ends of dimension 0
    space = unit_space(2)
    grid = EvaluationGrid(halton(2, 64).points, space)
    U = grid.points

    def errors(center):
        return 1.0 - 0.8 * np.exp(-np.sum((U - center) ** 2, axis=1) / (2 * 0.2**2))

    inst = Instances(np.zeros((1, 1)), [0])
    low = DatasetRecord("mode-low", errors([0.2, 0.5]), inst)
    high = DatasetRecord("mode-high", errors([0.8, 0.5]), inst)
    a, b = subtracted_ccov(low, grid), subtracted_ccov(high, grid)
    ok = acceptance("CCoV sign-pattern reproduction", np.sign(a[0]) == -np.sign(b[0]) != 0,
                    f"dimension 0: mode-low {a[0]:+.4f}, mode-high {b[0]:+.4f}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
