"""Synthetic task families standing in for real image datasets.

Each task has a response surface over the normalized hyperparameter cube,
``baseline - sum_q depth_q * exp(-|u - c_q|^2 / (2 width_q^2))`` clamped to
``[0.02, 1]``, and a cloud of labelled instance vectors. Tasks come in
families: every family draws its own bump layout and instance distribution,
and each subsample fraction ``f`` moves both along a fixed family direction
by ``1 - f``. Related tasks therefore have related surfaces *and* related
instances, which is the premise warm-starting relies on.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import rng as _rng
from .acquisition import AcquisitionConfig
from .bho import Trace, run_bho, warm_start_init
from .history import DatasetRecord, EvaluationGrid, HistoryStore, Instances
from .hyperspace import HyperparameterSpace, canonical_cnn_space, denormalize, normalize
from .metafeature import MeanInstanceWing, compute_metafeatures
from .sampling import halton, sample

ERROR_FLOOR = 0.02
DEFAULT_FRACTIONS = tuple(round(0.1 * i, 1) for i in range(1, 11))
BASELINES = ("uniform", "latin", "halton")
WARM_METHODS = ("warmstart", "warmstart_mean")
ALL_METHODS = BASELINES + WARM_METHODS


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    id: str
    family: int
    fraction: float
    centers: np.ndarray
    widths: np.ndarray
    depths: np.ndarray
    baseline: float
    instance_mean: np.ndarray
    instance_scale: float
    class_probs: np.ndarray
    instance_count: int
    instance_seed: int
    heldout: bool = False

    def surface(self, U) -> np.ndarray:
        """Error at unit-cube points ``U`` (shape ``(..., d)``)."""
        U = np.asarray(U, dtype=float)
        sq = np.sum((U[..., None, :] - self.centers) ** 2, axis=-1)
        dip = np.sum(self.depths * np.exp(-sq / (2.0 * self.widths**2)), axis=-1)
        return np.clip(self.baseline - dip, ERROR_FLOOR, 1.0)

    def instances(self) -> Instances:
        gen = _rng.stream(self.instance_seed, "instances", self.id)
        labels = gen.choice(len(self.class_probs), size=self.instance_count, p=self.class_probs)
        data = self.instance_mean + self.instance_scale * gen.standard_normal(
            (self.instance_count, self.instance_mean.shape[0])
        )
        return Instances(data, labels)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "family": self.family,
            "fraction": self.fraction,
            "centers": self.centers.tolist(),
            "widths": self.widths.tolist(),
            "depths": self.depths.tolist(),
            "baseline": self.baseline,
            "instance_mean": self.instance_mean.tolist(),
            "instance_scale": self.instance_scale,
            "class_probs": self.class_probs.tolist(),
            "instance_count": self.instance_count,
            "instance_seed": self.instance_seed,
            "heldout": self.heldout,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SyntheticTask":
        return cls(
            doc["id"],
            int(doc["family"]),
            float(doc["fraction"]),
            np.asarray(doc["centers"], dtype=float),
            np.asarray(doc["widths"], dtype=float),
            np.asarray(doc["depths"], dtype=float),
            float(doc["baseline"]),
            np.asarray(doc["instance_mean"], dtype=float),
            float(doc["instance_scale"]),
            np.asarray(doc["class_probs"], dtype=float),
            int(doc["instance_count"]),
            int(doc["instance_seed"]),
            bool(doc.get("heldout", False)),
        )


def evaluate_task(task: SyntheticTask, space: HyperparameterSpace, v) -> float:
    """Error of ``task`` at raw vector ``v``; integer-cast dimensions are truncated first."""
    v = np.array(v, dtype=float)
    for i, dim in enumerate(space.dims):
        if dim.kind == "int_cast":
            v[i] = float(int(v[i]))
    return float(task.surface(normalize(space, v)))


@dataclass(frozen=True)
class CollectionSpec:
    family_count: int = 8
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    instance_dim: int = 8
    instances_per_task: int = 400
    grid_size: int = 64
    seed: int = 0
    bumps: int = 3
    num_classes: int = 5

    def __post_init__(self):
        if min(self.family_count, self.instance_dim, self.instances_per_task, self.grid_size, self.bumps) < 1:
            raise ValueError("collection counts must be >= 1")
        if not self.fractions or any(not 0.0 < f <= 1.0 for f in self.fractions):
            raise ValueError("fractions must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class _Family:
    centers: np.ndarray
    widths: np.ndarray
    depths: np.ndarray
    baseline: float
    center_shift: np.ndarray
    depth_shift: np.ndarray
    instance_mean: np.ndarray
    instance_shift: np.ndarray
    class_probs: np.ndarray


def _family(spec: CollectionSpec, d: int, index: int) -> _Family:
    gen = _rng.stream(spec.seed, "family", str(index))
    Q = spec.bumps
    centers = gen.uniform(0.1, 0.9, (Q, d))
    widths = np.concatenate([[gen.uniform(0.3, 0.4)], gen.uniform(0.12, 0.25, Q - 1)])
    depths = np.concatenate([[gen.uniform(0.6, 0.8)], gen.uniform(0.2, 0.45, Q - 1)])
    baseline = gen.uniform(0.85, 0.95)
    center_shift = gen.normal(0.0, 0.12, (Q, d))
    depth_shift = -gen.uniform(0.05, 0.2, Q)
    instance_mean = gen.normal(0.0, 2.0, spec.instance_dim)
    instance_shift = gen.normal(0.0, 1.0, spec.instance_dim)
    class_probs = gen.dirichlet(np.full(spec.num_classes, 2.0))
    return _Family(centers, widths, depths, baseline, center_shift, depth_shift,
                   instance_mean, instance_shift, class_probs)


def _variant(spec, fam: _Family, family: int, fraction: float, task_id: str, instance_seed: int, heldout=False):
    s = 1.0 - fraction
    return SyntheticTask(
        id=task_id,
        family=family,
        fraction=fraction,
        centers=np.clip(fam.centers + s * fam.center_shift, 0.0, 1.0),
        widths=fam.widths.copy(),
        depths=np.clip(fam.depths + s * fam.depth_shift, 0.05, 1.0),
        baseline=fam.baseline,
        instance_mean=fam.instance_mean + s * fam.instance_shift,
        instance_scale=1.0,
        class_probs=fam.class_probs.copy(),
        instance_count=max(20, int(round(spec.instances_per_task * fraction))),
        instance_seed=instance_seed,
        heldout=heldout,
    )


# The grid skips the head of the Halton sequence, which the Halton baseline
# initializer uses; otherwise that baseline would evaluate grid points.
GRID_HALTON_START = 1001


def make_grid(space: HyperparameterSpace, n: int, start_index: int = GRID_HALTON_START) -> EvaluationGrid:
    """``n`` Halton points mapped into the space (integer sets snapped)."""
    pts = np.array([denormalize(space, u) for u in halton(space.d, n, start_index).points])
    return EvaluationGrid(pts, space)


def make_collection(spec: CollectionSpec = CollectionSpec(), space: HyperparameterSpace | None = None):
    """Build the historical store: one record per (family, fraction) task."""
    space = space or canonical_cnn_space()
    grid = make_grid(space, spec.grid_size)
    tasks, records = [], []
    for f in range(spec.family_count):
        fam = _family(spec, space.d, f)
        for frac in spec.fractions:
            tid = f"fam{f}-{int(round(frac * 100)):03d}"
            task = _variant(spec, fam, f, frac, tid, spec.seed)
            errors = np.array([evaluate_task(task, space, v) for v in grid.points])
            records.append(DatasetRecord(tid, errors, task.instances(), frac, f"fam{f}"))
            tasks.append(task)
    return HistoryStore(grid, tuple(records)), tasks


def make_heldout(spec: CollectionSpec = CollectionSpec(), space: HyperparameterSpace | None = None, count: int = 4):
    """New tasks from existing families, at fractions and instance draws the store never saw."""
    space = space or canonical_cnn_space()
    gen = _rng.stream(spec.seed, "heldout")
    families = np.sort(gen.choice(spec.family_count, size=min(count, spec.family_count), replace=False))
    tasks = []
    for f in families:
        frac = float(np.round(gen.uniform(0.15, 0.95), 3))
        fam = _family(spec, space.d, int(f))
        tasks.append(_variant(spec, fam, int(f), frac, f"fam{f}-test", _rng.child_seed(spec.seed, "heldout-inst"), True))
    return tasks


def make_realizable_store(K: int = 20, n: int = 64, instance_dim: int = 8, count: int = 100,
                          noise: float = 0.1, seed: int = 0) -> HistoryStore:
    """Store whose target distances a linear map of the mean instance reproduces exactly.

    Record ``i`` has latent ``z_i``; its errors are ``base + z_i * slope`` so the
    L1 distance is ``|z_i - z_j| * sum(slope)``, and its instances are centred
    on ``z_i * direction``.
    """
    gen = _rng.stream(seed, "realizable")
    space = HyperparameterSpace.from_json(
        {"dims": [{"name": f"x{i}", "kind": "real", "lower": 0.0, "upper": 1.0} for i in range(2)]}
    )
    grid = EvaluationGrid(halton(2, n, 1).points, space)
    base = gen.uniform(0.1, 0.3, n)
    slope = gen.uniform(0.0, 0.4, n)
    z = gen.uniform(0.0, 1.0, K)
    direction = gen.normal(0.0, 1.0, instance_dim)
    direction /= np.linalg.norm(direction)
    records = []
    for i in range(K):
        data = z[i] * 3.0 * direction + noise * gen.standard_normal((count, instance_dim))
        records.append(DatasetRecord(f"r{i:02d}", base + z[i] * slope, Instances(data, np.zeros(count, dtype=int))))
    return HistoryStore(grid, tuple(records))


# -- initializer comparison --------------------------------------------------


@dataclass(frozen=True, order=True)
class Cell:
    task_id: str
    method: str
    acq: str
    seed: int


@dataclass
class Comparison:
    rows: list[tuple] = field(default_factory=list)
    traces: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def final_best(self, task_id, method, acq) -> list[float]:
        out = []
        for cell, tr in self.traces.items():
            if (cell.task_id, cell.method, cell.acq) == (task_id, method, acq):
                out.append(float(tr.best_so_far[-1]))
        return out

    def summary(self) -> list[tuple]:
        """Median and mean best-so-far per (task, method, acq, iteration), plus task ``ALL``."""
        groups: dict = {}
        for task_id, method, acq, seed, it, best in self.rows:
            groups.setdefault((task_id, method, acq, it), []).append(best)
            groups.setdefault(("ALL", method, acq, it), []).append(best)
        return [
            (key[0], key[1], key[2], key[3], float(np.median(v)), float(np.mean(v)))
            for key, v in sorted(groups.items(), key=lambda kv: (kv[0][0] == "ALL", kv[0]))
        ]


@dataclass(frozen=True, eq=False)
class _Context:
    store: HistoryStore
    mean_store: HistoryStore | None
    tasks: dict
    wing: object
    mean_wing: object
    space: HyperparameterSpace
    k: int
    T: int
    tau: int
    embed_seed: int


def baseline_init(method: str, space: HyperparameterSpace, k: int, seed: int, task_id: str) -> list[np.ndarray]:
    """Space-filling initial vectors for one (task, seed) cell."""
    batch = sample(method, space.d, k, _rng.child_seed(seed, "init", task_id))
    return [denormalize(space, u) for u in batch.points]


def cell_acquisition(kind: str, seed: int, task_id: str, kappa: float = 2.0) -> AcquisitionConfig:
    return AcquisitionConfig(kind=kind, kappa=kappa, seed=_rng.child_seed(seed, "bo", task_id, kind))


def initial_design(method: str, ctx: _Context, task: SyntheticTask, seed: int) -> list[np.ndarray]:
    if method in BASELINES:
        return baseline_init(method, ctx.space, ctx.k, seed, task.id)
    if method == "warmstart":
        return warm_start_init(ctx.wing, ctx.store, task.instances(), ctx.k, ctx.tau, ctx.embed_seed)
    if method == "warmstart_mean":
        return warm_start_init(ctx.mean_wing, ctx.mean_store, task.instances(), ctx.k, ctx.tau, ctx.embed_seed)
    raise ValueError(f"unknown initialization method {method!r}")


def run_cell(ctx: _Context, cell: Cell) -> Trace:
    task = ctx.tasks[cell.task_id]
    init = initial_design(cell.method, ctx, task, cell.seed)
    acq = cell_acquisition(cell.acq, cell.seed, task.id)
    trace = run_bho(lambda v: evaluate_task(task, ctx.space, v), ctx.space, init, ctx.T, acq, cell.method)
    trace.seed = cell.seed
    return trace


_WORKER_CTX = None


def _init_worker(ctx):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _run_in_worker(cell):
    try:
        return cell, run_cell(_WORKER_CTX, cell), None
    except Exception as exc:  # reported per cell; other cells keep running
        return cell, None, f"{type(exc).__name__}: {exc}"


def compare_initializations(
    store: HistoryStore,
    tasks_heldout: Sequence[SyntheticTask],
    wing,
    space: HyperparameterSpace | None = None,
    methods: Sequence[str] = ALL_METHODS,
    acqs: Sequence[str] = ("ei", "ucb"),
    k: int = 3,
    T: int = 15,
    seeds: Iterable[int] = range(5),
    tau: int = 200,
    embed_seed: int = 0,
    jobs: int = 1,
    on_cell: Callable | None = None,
) -> Comparison:
    """Run every (held-out task, method, acquisition, seed) cell.

    Cells are processed and reported in sorted order whatever ``jobs`` is, so
    the output does not depend on parallelism. ``on_cell(cell, trace, error)``
    fires as each cell's turn comes, which lets callers flush rows early.
    """
    space = space or store.grid.space
    ids = set(store.ids)
    for t in tasks_heldout:
        if t.id in ids:
            raise ValueError(f"held-out task {t.id!r} is present in the training store")
    for m in methods:
        if m not in ALL_METHODS:
            raise ValueError(f"unknown initialization method {m!r}")
    needs_wing = "warmstart" in methods
    if needs_wing and store.metafeatures is None:
        store = store.with_metafeatures(compute_metafeatures(wing, store, tau, embed_seed))
    mean_wing = mean_store = None
    if "warmstart_mean" in methods:
        mean_wing = MeanInstanceWing(store.records[0].instances.dim)
        mean_store = store.with_metafeatures(compute_metafeatures(mean_wing, store, tau, embed_seed))
    ctx = _Context(store, mean_store, {t.id: t for t in tasks_heldout}, wing, mean_wing,
                   space, k, T, tau, embed_seed)
    cells = sorted(
        Cell(t.id, m, a, int(s)) for t in tasks_heldout for m in methods for a in acqs for s in seeds
    )
    result = Comparison()

    def consume(cell, trace, err):
        if err is not None:
            result.failures[cell] = err
        else:
            result.traces[cell] = trace
            for it, best in enumerate(trace.best_so_far, start=1):
                result.rows.append((cell.task_id, cell.method, cell.acq, cell.seed, it, float(best)))
        if on_cell is not None:
            on_cell(cell, trace, err)

    if jobs <= 1:
        _init_worker(ctx)
        for cell in cells:
            consume(*_run_in_worker(cell))
    else:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(ctx,)) as pool:
            for out in pool.map(_run_in_worker, cells):
                consume(*out)
    return result


COMPARISON_HEADER = ["task_id", "method", "acq", "seed", "iteration", "best_so_far"]
SUMMARY_HEADER = ["task_id", "method", "acq", "iteration", "median_best_so_far", "mean_best_so_far"]


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for r in rows:
            out.writerow([repr(x) if isinstance(x, float) else x for x in r])
