"""Siamese distance-matching metric learner over whole datasets.

A wing maps a dataset to one meta-feature vector in three stages:

1. a fully-connected ReLU extractor applied to every instance; the label,
   as one scaled channel ``label / num_classes``, is appended both to the
   extractor's input and to its output;
2. the arithmetic mean of the per-instance features, which makes the result
   independent of instance order and count;
3. a head of two ReLU layers and a final linear layer (256 units each by
   default).

Training pulls the Euclidean distance between two datasets' meta-features
towards the L1 distance between their error vectors on the shared grid. Both
wings share weights, so training updates a single parameter set; gradients
are back-propagated by hand and updated with Adam on an exponentially
decaying step size.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as _rng
from .errors import DimensionMismatchError, DivergenceError, MissingMetaFeaturesError
from .history import HistoryStore, Instances, target_distance_matrix

DEFAULT_EXTRACTOR = (64, 64)
DEFAULT_HEAD = (256, 256, 256)


@dataclass(eq=False)
class Layer:
    W: np.ndarray
    b: np.ndarray

    @property
    def shape(self):
        return self.W.shape


@dataclass(eq=False)
class WingParams:
    """Weights of one Siamese wing.

    ``extractor`` layers all end in ReLU; in ``head`` every layer but the last
    does.
    """

    instance_dim: int
    num_classes: int
    extractor: list[Layer]
    head: list[Layer]

    def __post_init__(self):
        layers = self.extractor + self.head
        if self.extractor[0].W.shape[0] != self.instance_dim + 1:
            raise ValueError("extractor input must be instance_dim + 1 (label channel)")
        if self.head[0].W.shape[0] != self.extractor[-1].W.shape[1] + 1:
            raise ValueError("head input must be extractor output + 1 (label channel)")
        for block in (self.extractor, self.head):
            for a, b in zip(block, block[1:]):
                if a.W.shape[1] != b.W.shape[0]:
                    raise ValueError(f"layer shapes {a.W.shape} and {b.W.shape} do not chain")
        for layer in layers:
            if layer.b.shape != (layer.W.shape[1],):
                raise ValueError("bias length must match layer output")
            if not (np.all(np.isfinite(layer.W)) and np.all(np.isfinite(layer.b))):
                raise ValueError("wing weights must be finite")

    @property
    def layers(self) -> list[Layer]:
        return self.extractor + self.head

    @property
    def feature_dim(self) -> int:
        return self.extractor[-1].W.shape[1] + 1

    @property
    def meta_dim(self) -> int:
        return self.head[-1].W.shape[1]

    def tensors(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.W, layer.b])
        return out

    def copy(self) -> "WingParams":
        return WingParams(
            self.instance_dim,
            self.num_classes,
            [Layer(l.W.copy(), l.b.copy()) for l in self.extractor],
            [Layer(l.W.copy(), l.b.copy()) for l in self.head],
        )

    def inputs(self, data: np.ndarray, labels: np.ndarray) -> np.ndarray:
        data = np.atleast_2d(np.asarray(data, dtype=float))
        if data.shape[1] != self.instance_dim:
            raise DimensionMismatchError(
                f"instances have dimension {data.shape[1]}, wing expects {self.instance_dim}"
            )
        lab = np.asarray(labels, dtype=float).reshape(-1, 1) / self.num_classes
        return np.hstack([data, lab])

    def embed_rows(self, data, labels) -> np.ndarray:
        return head_forward(self, aggregate_adf(deep_features(self, data, labels)))

    def to_json(self) -> dict:
        def dump(layers):
            return [
                {"in": l.W.shape[0], "out": l.W.shape[1], "W": l.W.ravel().tolist(), "b": l.b.tolist()}
                for l in layers
            ]

        return {
            "instance_dim": self.instance_dim,
            "num_classes": self.num_classes,
            "extractor": dump(self.extractor),
            "head": dump(self.head),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "WingParams":
        def load(entries):
            return [
                Layer(np.asarray(e["W"], dtype=float).reshape(e["in"], e["out"]), np.asarray(e["b"], dtype=float))
                for e in entries
            ]

        return cls(int(doc["instance_dim"]), int(doc["num_classes"]), load(doc["extractor"]), load(doc["head"]))


class MeanInstanceWing:
    """Stub wing whose meta-feature is the mean instance vector.

    Serves as an untrained, hand-crafted-statistics baseline and as a test
    oracle for retrieval.
    """

    def __init__(self, instance_dim: int):
        self.instance_dim = instance_dim

    def embed_rows(self, data, labels) -> np.ndarray:
        data = np.atleast_2d(np.asarray(data, dtype=float))
        if data.shape[1] != self.instance_dim:
            raise DimensionMismatchError(
                f"instances have dimension {data.shape[1]}, wing expects {self.instance_dim}"
            )
        return aggregate_adf(data)


def init_wing(
    instance_dim: int,
    num_classes: int,
    seed: int = 0,
    extractor_sizes: Sequence[int] = DEFAULT_EXTRACTOR,
    head_sizes: Sequence[int] = DEFAULT_HEAD,
) -> WingParams:
    """Uniform fan-in initialization, weights in ``+-1/sqrt(fan_in)``, zero biases."""
    gen = _rng.stream(seed, "wing-init")

    def block(sizes):
        layers = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            layers.append(Layer(gen.uniform(-bound, bound, (fan_in, fan_out)), np.zeros(fan_out)))
        return layers

    ext = block([instance_dim + 1, *extractor_sizes])
    head = block([extractor_sizes[-1] + 1, *head_sizes])
    return WingParams(instance_dim, num_classes, ext, head)


# -- forward pieces ----------------------------------------------------------


def _extract(w: WingParams, X: np.ndarray, keep: bool = False):
    acts = [X]
    h = X
    for layer in w.extractor:
        h = np.maximum(h @ layer.W + layer.b, 0.0)
        acts.append(h)
    h = np.hstack([h, X[:, -1:]])
    return (h, acts) if keep else h


def _head(w: WingParams, H: np.ndarray, keep: bool = False):
    acts = [H]
    h = H
    last = len(w.head) - 1
    for i, layer in enumerate(w.head):
        h = h @ layer.W + layer.b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return (h, acts) if keep else h


def deep_features(w: WingParams, instances, labels) -> np.ndarray:
    """Per-instance extractor output plus label channel, one row per instance."""
    return _extract(w, w.inputs(instances, labels))


def aggregate_adf(features) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("aggregation needs a non-empty list of feature vectors")
    return features.mean(axis=0)


def head_forward(w: WingParams, h_mf: np.ndarray) -> np.ndarray:
    return _head(w, np.atleast_2d(h_mf))[0]


def subsample_indices(count: int, tau: int, seed: int) -> np.ndarray:
    """Sorted indices of ``min(tau, count)`` instances drawn without replacement."""
    if tau >= count:
        return np.arange(count)
    gen = _rng.stream(seed, "subsample")
    return np.sort(gen.choice(count, size=tau, replace=False))


def embed_dataset(w, record, tau: int = 200, seed: int = 0) -> np.ndarray:
    """Meta-feature of a dataset (a record or bare :class:`Instances`)."""
    inst = record.instances if hasattr(record, "instances") else record
    idx = subsample_indices(inst.count, tau, seed)
    return w.embed_rows(inst.data[idx], inst.labels[idx])


def compute_metafeatures(w, store: HistoryStore, tau: int = 200, seed: int = 0) -> np.ndarray:
    return np.stack([embed_dataset(w, rec, tau, seed) for rec in store.records])


def mf_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"meta-features of shape {a.shape} and {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def pair_loss(m_i, m_j, d_target: float) -> float:
    """Squared residual between the target distance and the meta-feature distance."""
    return (d_target - mf_distance(m_i, m_j)) ** 2


def knn(query, store: HistoryStore, k: int) -> list[str]:
    """Ids of the ``k`` records nearest to ``query``; earlier records win ties."""
    if store.metafeatures is None:
        raise MissingMetaFeaturesError("store has no meta-features; embed it with a wing first")
    if not 1 <= k <= store.K:
        raise ValueError(f"k={k} outside 1..{store.K}")
    query = np.asarray(query, dtype=float)
    if query.shape != store.metafeatures.shape[1:]:
        raise DimensionMismatchError(
            f"query of shape {query.shape} against meta-features {store.metafeatures.shape[1:]}"
        )
    dist = np.sqrt(np.sum((store.metafeatures - query) ** 2, axis=1))
    order = np.argsort(dist, kind="stable")[:k]
    return [store.records[i].id for i in order]


# -- batched loss and gradient ----------------------------------------------


def _batch_forward_backward(w: WingParams, groups, pairs, d_target, need_grad=True):
    """Mean pair loss over ``pairs`` and its gradient w.r.t. every wing tensor.

    ``groups`` holds one ``(data, labels)`` subsample per embedded dataset;
    ``pairs`` indexes into it.
    """
    X = np.vstack([w.inputs(d, l) for d, l in groups])
    sizes = np.array([len(l) for _, l in groups])
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    H, ext_acts = _extract(w, X, keep=True)
    Hm = np.add.reduceat(H, offsets, axis=0) / sizes[:, None]
    M, head_acts = _head(w, Hm, keep=True)

    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    diff = M[a] - M[b]
    # overflow shows up as a non-finite loss, which the trainer reports
    with np.errstate(over="ignore", invalid="ignore"):
        dist = np.sqrt(np.sum(diff * diff, axis=1))
        resid = d_target - dist
        loss = float(np.mean(resid**2))
        if not need_grad:
            return loss, None
        B = len(pairs)
        safe = np.where(dist > 0, dist, 1.0)
        coef = np.where(dist > 0, -2.0 * resid / safe / B, 0.0)
        gpair = coef[:, None] * diff
    gM = np.zeros_like(M)
    np.add.at(gM, a, gpair)
    np.add.at(gM, b, -gpair)

    grads_head = []
    g = gM
    for i in range(len(w.head) - 1, -1, -1):
        layer = w.head[i]
        if i < len(w.head) - 1:
            g = g * (head_acts[i + 1] > 0)
        grads_head.append((head_acts[i].T @ g, g.sum(axis=0)))
        g = g @ layer.W.T
    grads_head.reverse()

    # the appended label column carries no parameters
    g = np.repeat(g[:, :-1] / sizes[:, None], sizes, axis=0)
    grads_ext = []
    for i in range(len(w.extractor) - 1, -1, -1):
        layer = w.extractor[i]
        g = g * (ext_acts[i + 1] > 0)
        grads_ext.append((ext_acts[i].T @ g, g.sum(axis=0)))
        if i > 0:
            g = g @ layer.W.T
    grads_ext.reverse()

    flat = []
    for gw, gb in grads_ext + grads_head:
        flat.extend([gw, gb])
    return loss, flat


def batch_loss_and_grad(w: WingParams, groups, pairs, d_target):
    return _batch_forward_backward(w, groups, pairs, np.asarray(d_target, dtype=float))


# -- training ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    tau: int = 200
    iterations: int = 2000
    batch_pairs: int = 8
    step_size: float = 1e-4
    decay: float = 1e-3
    seed: int = 0
    val_pairs: int = 20
    eval_every: int = 50
    eval_train_pairs: int = 100
    extractor_sizes: tuple[int, ...] = DEFAULT_EXTRACTOR
    head_sizes: tuple[int, ...] = DEFAULT_HEAD

    def __post_init__(self):
        if self.tau < 1 or self.iterations < 1 or self.batch_pairs < 1:
            raise ValueError("tau, iterations and batch_pairs must be >= 1")
        if self.step_size < 0 or self.decay < 0:
            raise ValueError("step_size and decay must be non-negative")


@dataclass
class TrainResult:
    wing: WingParams
    initial_wing: WingParams
    losses: list[tuple[int, float, float]] = field(default_factory=list)
    batch_losses: list[float] = field(default_factory=list)
    val_pairs: list[tuple[int, int]] = field(default_factory=list)

    @property
    def initial_train_loss(self) -> float:
        return self.losses[0][1]

    @property
    def final_train_loss(self) -> float:
        return self.losses[-1][1]

    @property
    def initial_val_loss(self) -> float:
        return self.losses[0][2]

    @property
    def final_val_loss(self) -> float:
        return self.losses[-1][2]


class Adam:
    def __init__(self, tensors, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(t) for t in tensors]
        self.v = [np.zeros_like(t) for t in tensors]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, tensors, grads, lr):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(tensors, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _subsample(inst: Instances, tau: int, gen: np.random.Generator):
    if tau >= inst.count:
        return inst.data, inst.labels
    idx = gen.choice(inst.count, size=tau, replace=False)
    return inst.data[idx], inst.labels[idx]


def _pair_groups(store, pairs, tau, gen):
    groups = []
    for i, j in pairs:
        groups.append(_subsample(store.records[i].instances, tau, gen))
        groups.append(_subsample(store.records[j].instances, tau, gen))
    return groups, [(2 * p, 2 * p + 1) for p in range(len(pairs))]


def _fixed_loss(w, store, pairs, D, tau, seed):
    """Loss on a fixed pair list with subsamples fixed by ``seed``."""
    if not pairs:
        return float("nan")
    gen = _rng.stream(seed, "eval-subsample")
    groups, idx = _pair_groups(store, pairs, tau, gen)
    d = np.array([D[i, j] for i, j in pairs])
    return _batch_forward_backward(w, groups, idx, d, need_grad=False)[0]


def split_pairs(K: int, val_pairs: int, seed: int):
    """Choose held-out validation pairs; every other unordered pair trains."""
    all_pairs = [(i, j) for i in range(K) for j in range(i + 1, K)]
    n_val = min(val_pairs, max(len(all_pairs) - 1, 0))
    gen = _rng.stream(seed, "val-pairs")
    chosen = set(gen.choice(len(all_pairs), size=n_val, replace=False).tolist()) if n_val else set()
    val = [all_pairs[i] for i in sorted(chosen)]
    train = [p for i, p in enumerate(all_pairs) if i not in chosen]
    return train, val


def train(store: HistoryStore, cfg: TrainConfig = TrainConfig(), wing: WingParams | None = None) -> TrainResult:
    """Fit wing weights so meta-feature distances match target distances."""
    if store.K < 2:
        raise ValueError("training needs at least two records")
    dim = store.records[0].instances.dim
    num_classes = int(max(int(r.instances.labels.max()) for r in store.records)) + 1
    if wing is None:
        wing = init_wing(dim, max(num_classes, 1), cfg.seed, cfg.extractor_sizes, cfg.head_sizes)
    w = wing.copy()
    initial = wing.copy()
    D = target_distance_matrix(store)
    train_pairs, val_pairs = split_pairs(store.K, cfg.val_pairs, cfg.seed)
    val_set = set(val_pairs)
    gen = _rng.stream(cfg.seed, "train")
    eval_gen = _rng.stream(cfg.seed, "eval-pairs")
    n_eval = min(cfg.eval_train_pairs, len(train_pairs))
    eval_idx = np.sort(eval_gen.choice(len(train_pairs), size=n_eval, replace=False))
    eval_pairs = [train_pairs[i] for i in eval_idx]

    result = TrainResult(w, initial, val_pairs=val_pairs)

    def record(it):
        tr = _fixed_loss(w, store, eval_pairs, D, cfg.tau, cfg.seed)
        va = _fixed_loss(w, store, val_pairs, D, cfg.tau, cfg.seed)
        result.losses.append((it, tr, va))

    record(0)
    tensors = w.tensors()
    opt = Adam(tensors)
    for it in range(1, cfg.iterations + 1):
        pairs = []
        while len(pairs) < cfg.batch_pairs:
            i, j = gen.choice(store.K, size=2, replace=False)
            if (min(i, j), max(i, j)) in val_set:
                continue
            pairs.append((int(i), int(j)))
        groups, idx = _pair_groups(store, pairs, cfg.tau, gen)
        d = np.array([D[i, j] for i, j in pairs])
        loss, grads = _batch_forward_backward(w, groups, idx, d)
        if not math.isfinite(loss):
            raise DivergenceError(it, loss)
        result.batch_losses.append(loss)
        lr = cfg.step_size * math.exp(-cfg.decay * (it - 1))
        opt.step(tensors, grads, lr)
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            record(it)
            if not math.isfinite(result.losses[-1][1]):
                raise DivergenceError(it, result.losses[-1][1])
    return result


# -- persistence -------------------------------------------------------------


def save_wing(w: WingParams, path):
    Path(path).write_text(json.dumps(w.to_json()) + "\n")


def load_wing(path) -> WingParams:
    return WingParams.from_json(json.loads(Path(path).read_text()))


def write_loss_csv(result: TrainResult, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["iteration", "train_loss", "val_loss"])
        for it, tr, va in result.losses:
            out.writerow([it, repr(tr), repr(va)])


def save_metafeatures(store: HistoryStore, mf: np.ndarray, path, tau: int, seed: int):
    doc = {"tau": tau, "seed": seed, "ids": store.ids, "values": np.asarray(mf).tolist()}
    Path(path).write_text(json.dumps(doc) + "\n")


def load_metafeatures(store: HistoryStore, path) -> tuple[HistoryStore, int, int]:
    """Attach a meta-feature sidecar to ``store``; returns ``(store, tau, seed)``."""
    doc = json.loads(Path(path).read_text())
    by_id = dict(zip(doc["ids"], doc["values"]))
    missing = [i for i in store.ids if i not in by_id]
    if missing:
        raise MissingMetaFeaturesError(f"sidecar lacks meta-features for {missing[:5]}")
    mf = np.array([by_id[i] for i in store.ids])
    return store.with_metafeatures(mf), int(doc["tau"]), int(doc["seed"])
