import itertools

import numpy as np
import pytest

from helpers import unit_space
from warmbho import synthbench as sb
from warmbho.history import save_store, target_distance_matrix
from warmbho.hyperspace import canonical_cnn_space, denormalize
from warmbho.metafeature import MeanInstanceWing

SMALL = sb.CollectionSpec(family_count=3, fractions=(0.5, 1.0), instances_per_task=40, grid_size=16)


@pytest.fixture(scope="module")
def default_collection():
    return sb.make_collection()


def one_bump_task(depth=0.9, baseline=0.95, center=(0.5, 0.5)):
    return sb.SyntheticTask(
        "t", 0, 1.0, np.array([center]), np.array([0.1]), np.array([depth]), baseline,
        np.zeros(2), 1.0, np.array([1.0]), 10, 0,
    )


def test_default_collection_has_eighty_records(default_collection):
    store, tasks = default_collection
    assert store.K == 80 and len(tasks) == 80
    assert store.grid.n == 64
    assert len({r.parent for r in store.records}) == 8


def test_full_fraction_is_family_base():
    space = canonical_cnn_space()
    spec = sb.CollectionSpec()
    fam = sb._family(spec, space.d, 2)
    task = sb._variant(spec, fam, 2, 1.0, "x", 0)
    assert np.array_equal(task.centers, fam.centers)
    assert np.array_equal(task.depths, fam.depths)
    assert np.array_equal(task.instance_mean, fam.instance_mean)


def test_store_files_are_byte_identical(tmp_path):
    a, _ = sb.make_collection(SMALL)
    b, _ = sb.make_collection(SMALL)
    save_store(a, tmp_path / "a.json")
    save_store(b, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_bump_center_value():
    task = one_bump_task()
    assert task.surface(np.array([0.5, 0.5])) == pytest.approx(0.05, abs=1e-12)


def test_far_from_bumps_is_baseline():
    task = one_bump_task(center=(0.0, 0.0))
    assert task.surface(np.array([1.0, 1.0])) == pytest.approx(0.95, abs=1e-6)


def test_surface_clamped():
    deep = one_bump_task(depth=2.0)
    assert deep.surface(np.array([0.5, 0.5])) == sb.ERROR_FLOOR
    assert one_bump_task(baseline=1.4).surface(np.array([0.0, 0.0])) == 1.0


def test_evaluate_task_is_deterministic_and_truncates_integers():
    space = canonical_cnn_space()
    _, tasks = sb.make_collection(SMALL, space)
    v = denormalize(space, np.full(6, 0.4))
    assert sb.evaluate_task(tasks[0], space, v) == sb.evaluate_task(tasks[0], space, v)
    w = v.copy()
    w[2] = np.floor(v[2]) + 0.7
    cast = w.copy()
    cast[2] = np.floor(w[2])
    assert sb.evaluate_task(tasks[0], space, w) == sb.evaluate_task(tasks[0], space, cast)


def test_grid_minimum_is_positive(default_collection):
    store, _ = default_collection
    assert store.error_matrix().min() >= sb.ERROR_FLOOR


def test_within_family_distance_grows_with_fraction_gap(default_collection):
    store, tasks = default_collection
    D = target_distance_matrix(store)
    ok = total = 0
    for fam in range(8):
        idx = [i for i, t in enumerate(tasks) if t.family == fam]
        for a, b, c in itertools.permutations(idx, 3):
            gap_b = abs(tasks[a].fraction - tasks[b].fraction)
            gap_c = abs(tasks[a].fraction - tasks[c].fraction)
            if gap_b < gap_c - 1e-9:
                total += 1
                ok += D[a, b] <= D[a, c]
    assert ok / total >= 0.9


def test_families_are_separated(default_collection):
    store, tasks = default_collection
    D = target_distance_matrix(store)
    fam = np.array([t.family for t in tasks])
    same = fam[:, None] == fam[None, :]
    off = ~np.eye(len(tasks), dtype=bool)
    assert D[~same].mean() / D[same & off].mean() >= 1.5


def test_heldout_tasks_are_new(default_collection):
    store, _ = default_collection
    held = sb.make_heldout()
    assert len(held) == 4
    assert not {t.id for t in held} & set(store.ids)
    assert all(t.heldout and 0 < t.fraction < 1 for t in held)


def test_task_json_round_trip():
    _, tasks = sb.make_collection(SMALL)
    back = sb.SyntheticTask.from_json(tasks[1].to_json())
    u = np.random.default_rng(0).random((5, 6))
    assert np.array_equal(back.surface(u), tasks[1].surface(u))
    assert back.instances() == tasks[1].instances()


def test_spec_validation():
    with pytest.raises(ValueError):
        sb.CollectionSpec(family_count=0)
    with pytest.raises(ValueError):
        sb.CollectionSpec(fractions=(0.0, 0.5))


def tiny_comparison(jobs=1, methods=sb.ALL_METHODS):
    store, _ = sb.make_collection(SMALL)
    held = sb.make_heldout(SMALL, count=2)
    return sb.compare_initializations(
        store, held, MeanInstanceWing(8), methods=methods, acqs=("ei", "ucb"), k=2, T=3, seeds=range(2), jobs=jobs
    )


def test_comparison_row_count_and_methods():
    cmp = tiny_comparison()
    assert not cmp.failures
    assert len(cmp.traces) == 2 * 5 * 2 * 2
    assert len(cmp.rows) == 2 * 5 * 2 * 2 * 3
    assert {r[1] for r in cmp.rows} == set(sb.ALL_METHODS)
    summary = cmp.summary()
    assert {s[0] for s in summary} >= {"ALL"}
    assert len(summary) == (2 + 1) * 5 * 2 * 3


def test_comparison_order_independent_of_jobs():
    methods = ("uniform", "halton")
    assert tiny_comparison(1, methods).rows == tiny_comparison(2, methods).rows


def test_comparison_rejects_leaked_task():
    store, tasks = sb.make_collection(SMALL)
    with pytest.raises(ValueError):
        sb.compare_initializations(store, tasks[:1], MeanInstanceWing(8), methods=("uniform",), seeds=[0])


def test_realizable_store_distances_are_linear_in_latent():
    store = sb.make_realizable_store(K=5)
    D = target_distance_matrix(store)
    means = np.array([r.instances.data.mean(axis=0) for r in store.records])
    M = np.linalg.norm(means[:, None] - means[None], axis=-1)
    off = ~np.eye(5, dtype=bool)
    assert np.corrcoef(D[off], M[off])[0, 1] > 0.99


def test_grid_is_disjoint_from_halton_initial_design(default_collection):
    store, _ = default_collection
    space = store.grid.space
    init = sb.baseline_init("halton", space, 3, 0, "any")
    for v in init:
        assert not any(np.array_equal(v, p) for p in store.grid.points)


def test_trained_warm_start_beats_uniform_at_every_step(default_collection):
    from warmbho.metafeature import TrainConfig, train

    store, _ = default_collection
    task = [t for t in sb.make_heldout() if t.id == "fam2-test"][0]
    wing = train(store, TrainConfig()).wing
    cmp = sb.compare_initializations(store, [task], wing, methods=("uniform", "warmstart"), acqs=("ei",),
                                     seeds=range(20))
    curves = {}
    for m in ("uniform", "warmstart"):
        runs = np.array([tr.best_so_far for c, tr in cmp.traces.items() if c.method == m])
        assert runs.shape == (20, 15)
        curves[m] = np.median(runs, axis=0)
    assert np.all(curves["warmstart"][2:] <= curves["uniform"][2:])
