import numpy as np

from warmbho.history import DatasetRecord, EvaluationGrid, HistoryStore, Instances
from warmbho.hyperspace import DimensionSpec, HyperparameterSpace
from warmbho.history import target_distance_matrix
from warmbho.metafeature import batch_loss_and_grad, init_wing


def unit_space(d):
    return HyperparameterSpace(tuple(DimensionSpec(f"x{i}", 0.0, 1.0) for i in range(d)))


def random_store(gen, K=6, n=5, d=2, instance_dim=3, count=12):
    grid = EvaluationGrid(gen.random((n, d)), unit_space(d))
    records = tuple(
        DatasetRecord(
            f"r{i}",
            gen.random(n),
            Instances(gen.normal(size=(count, instance_dim)), gen.integers(0, 3, count)),
            fraction=round(float(gen.uniform(0.1, 1.0)), 2),
            parent="p",
        )
        for i in range(K)
    )
    return HistoryStore(grid, records)


def record(rid, errors, instances=None):
    instances = instances if instances is not None else Instances(np.zeros((2, 2)), [0, 1])
    return DatasetRecord(rid, errors, instances)


def toy_store():
    gen = np.random.default_rng(3)
    return random_store(gen, K=2, n=4, instance_dim=3, count=4)


def toy_problem():
    store = toy_store()
    w = init_wing(3, 3, seed=11)
    # non-zero biases so bias gradients are exercised too
    gen = np.random.default_rng(0)
    for layer in w.layers:
        layer.b[...] = gen.uniform(-0.1, 0.1, layer.b.shape)
    groups = [(r.instances.data, r.instances.labels) for r in store.records]
    d = target_distance_matrix(store)[0, 1]
    return w, groups, [(0, 1)], np.array([d])


def finite_difference_check(w, groups, pairs, d, entries=12, step=1e-5, seed=0):
    """Largest relative error between analytic and central-difference gradients."""
    _, grads = batch_loss_and_grad(w, groups, pairs, d)
    gen = np.random.default_rng(seed)
    worst = 0.0
    for tensor, grad in zip(w.tensors(), grads):
        flat, gflat = tensor.reshape(-1), grad.reshape(-1)
        idx = gen.choice(flat.size, size=min(entries, flat.size), replace=False)
        fd = np.empty(len(idx))
        for n, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + step
            up = batch_loss_and_grad(w, groups, pairs, d)[0]
            flat[i] = old - step
            down = batch_loss_and_grad(w, groups, pairs, d)[0]
            flat[i] = old
            fd[n] = (up - down) / (2 * step)
        an = gflat[idx]
        scale = max(np.linalg.norm(an), np.linalg.norm(fd), 1e-12)
        worst = max(worst, np.linalg.norm(an - fd) / scale)
    return worst
