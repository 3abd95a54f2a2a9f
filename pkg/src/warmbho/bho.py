"""Bayesian hyperparameter optimization loops, cold and warm-started.

Both loops share :func:`run_bho`; warm-starting only changes where the first
``k`` evaluations come from. Each iteration refits the GP from scratch on
every observation so far, maximizes the acquisition and evaluates the target
once, so a trace of length ``T`` always costs exactly ``T`` target calls.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import rng as _rng
from .acquisition import AcquisitionConfig, propose
from .errors import TargetEvaluationError
from .gp import KernelParams, condition, fit
from .history import HistoryStore, Instances, best_on_grid
from .hyperspace import HyperparameterSpace, denormalize, normalize, validate
from .metafeature import embed_dataset, knn

TargetFunction = Callable[[np.ndarray], float]

DUPLICATE_TOL = 1e-9


@dataclass
class Trace:
    vectors: list[np.ndarray] = field(default_factory=list)
    errors: list[float] = field(default_factory=list)
    init_count: int = 0
    method_tag: str = "bho"
    seed: int = 0

    def __len__(self):
        return len(self.errors)

    @property
    def acquired(self) -> list[tuple[np.ndarray, float]]:
        return list(zip(self.vectors, self.errors))

    @property
    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.errors, dtype=float))

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.errors))

    @property
    def best_vector(self) -> np.ndarray:
        return self.vectors[self.best_index]

    @property
    def best_error(self) -> float:
        return float(self.errors[self.best_index])

    def rows(self):
        best = self.best_so_far
        for t, (v, e) in enumerate(zip(self.vectors, self.errors)):
            phase = "init" if t < self.init_count else "bo"
            yield [t + 1, *[repr(float(x)) for x in v], repr(float(e)), repr(float(best[t])), phase, self.method_tag, self.seed]

    def header(self) -> list[str]:
        d = len(self.vectors[0]) if self.vectors else 0
        return ["iteration", *[f"theta_{i + 1}" for i in range(d)], "error", "best_so_far", "phase", "method", "seed"]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(self.header())
            out.writerows(self.rows())


class CountingTarget:
    """Wraps a target and counts evaluations."""

    def __init__(self, fn: TargetFunction):
        self.fn = fn
        self.calls = 0

    def __call__(self, v) -> float:
        self.calls += 1
        return self.fn(v)


def _evaluate(target, v, trace):
    err = target(v)
    try:
        err = float(err)
    except (TypeError, ValueError):
        err = math.nan
    if not math.isfinite(err):
        raise TargetEvaluationError(
            f"target returned {err!r} at evaluation {len(trace) + 1}", trace
        )
    trace.vectors.append(np.asarray(v, dtype=float).copy())
    trace.errors.append(err)


def _surrogate(U, y, seed):
    if len(y) >= 2:
        return fit(U, y, seed=seed)
    d = U.shape[1]
    return condition(U, y, KernelParams(np.full(d, 0.5), 1.0, 1e-6))


def run_bho(
    target: TargetFunction,
    space: HyperparameterSpace,
    init: Sequence[Sequence[float]],
    T: int,
    acq: AcquisitionConfig = AcquisitionConfig(),
    method_tag: str = "bho",
) -> Trace:
    """Evaluate ``init``, then run GP-based acquisition steps until ``T`` evaluations.

    ``acq.seed`` seeds every random choice inside the run.
    """
    init = [np.asarray(v, dtype=float) for v in init]
    k = len(init)
    if k < 1 or k > T:
        raise ValueError(f"need 1 <= k <= T, got k={k}, T={T}")
    for v in init:
        if not validate(space, v):
            raise ValueError(f"initial vector {v.tolist()} lies outside the space")
    trace = Trace(init_count=k, method_tag=method_tag, seed=acq.seed)
    for v in init:
        _evaluate(target, v, trace)

    for j in range(k + 1, T + 1):
        U = np.array([normalize(space, v) for v in trace.vectors])
        y = np.array(trace.errors)
        model = _surrogate(U, y, _rng.child_seed(acq.seed, "gp", str(j)))
        cfg = replace(acq, seed=_rng.child_seed(acq.seed, "acq", str(j)))
        prop = propose(model, space, cfg)
        u = prop.u
        if np.min(np.max(np.abs(U - u), axis=1)) < DUPLICATE_TOL:
            u = _fresh_candidate(prop, U)
        _evaluate(target, denormalize(space, u), trace)
    return trace


def _fresh_candidate(prop, U):
    """Best-scoring Halton candidate not already acquired."""
    halton_vals = prop.candidate_values[: prop.halton_count]
    for idx in np.argsort(-halton_vals, kind="stable"):
        cand = prop.candidates[idx]
        if np.min(np.max(np.abs(U - cand), axis=1)) >= DUPLICATE_TOL:
            return cand
    return prop.u


def warm_start_init(
    wing,
    store: HistoryStore,
    new_data: Instances,
    k: int = 3,
    tau: int = 200,
    seed: int = 0,
) -> list[np.ndarray]:
    """Grid-best vectors of the ``k`` stored datasets nearest to ``new_data``.

    Vectors come in ascending meta-feature distance; two neighbours with the
    same grid-best point both contribute it.
    """
    query = embed_dataset(wing, new_data, tau, seed)
    return [best_on_grid(store, rid) for rid in knn(query, store, k)]


def run_warm_bho(
    wing,
    store: HistoryStore,
    new_data: Instances,
    target: TargetFunction,
    space: HyperparameterSpace,
    k: int = 3,
    T: int = 15,
    acq: AcquisitionConfig = AcquisitionConfig(),
    tau: int = 200,
    embed_seed: int = 0,
    method_tag: str = "warmstart",
) -> Trace:
    init = warm_start_init(wing, store, new_data, k, tau, embed_seed)
    return run_bho(target, space, init, T, acq, method_tag)
