"""Evaluation histories on a shared hyperparameter grid.

Every dataset record carries the validation errors its model reached at the
same ``n`` grid points, in grid order. Sharing the grid is enforced by the
store: records never hold their own grid, so the L1 distance between two
error vectors always compares like with like.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateDimensionError,
    StoreParseError,
    UndefinedCCoVError,
    UnknownRecordError,
)
from .hyperspace import HyperparameterSpace, validate

_HEADER = struct.Struct("<II")


@dataclass(frozen=True, eq=False)
class EvaluationGrid:
    points: np.ndarray
    space: HyperparameterSpace

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] < 1:
            raise ValueError("grid needs at least one point")
        for i, p in enumerate(pts):
            if not validate(self.space, p):
                raise ValueError(f"grid point {i} {p.tolist()} lies outside the space")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError("grid contains duplicate points")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, EvaluationGrid)
            and self.space == other.space
            and np.array_equal(self.points, other.points)
        )


@dataclass(frozen=True, eq=False)
class Instances:
    """The contents of a dataset: one fixed-length vector and one label per instance."""

    data: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=float))
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if data.shape[0] < 1:
            raise ValueError("a dataset needs at least one instance")
        if labels.shape[0] != data.shape[0]:
            raise ValueError(f"{data.shape[0]} instances but {labels.shape[0]} labels")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, Instances)
            and np.array_equal(self.data, other.data)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class DatasetRecord:
    id: str
    errors: np.ndarray
    instances: Instances
    fraction: float = 1.0
    parent: str | None = None

    def __post_init__(self):
        errors = np.asarray(self.errors, dtype=float).ravel()
        if not np.all(np.isfinite(errors)) or np.any(errors < 0.0) or np.any(errors > 1.0):
            raise ValueError(f"record {self.id!r}: errors must lie in [0, 1]")
        object.__setattr__(self, "errors", errors)

    def __eq__(self, other):
        return (
            isinstance(other, DatasetRecord)
            and self.id == other.id
            and self.fraction == other.fraction
            and self.parent == other.parent
            and np.array_equal(self.errors, other.errors)
            and self.instances == other.instances
        )


@dataclass(frozen=True, eq=False)
class HistoryStore:
    grid: EvaluationGrid
    records: tuple[DatasetRecord, ...]
    metafeatures: np.ndarray | None = None
    _index: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise ValueError("a store needs at least one record")
        index = {}
        for pos, rec in enumerate(records):
            if rec.id in index:
                raise ValueError(f"duplicate record id {rec.id!r}")
            if rec.errors.shape[0] != self.grid.n:
                raise ValueError(
                    f"record {rec.id!r} has {rec.errors.shape[0]} errors for a grid of {self.grid.n}"
                )
            index[rec.id] = pos
        if self.metafeatures is not None:
            mf = np.atleast_2d(np.asarray(self.metafeatures, dtype=float))
            if mf.shape[0] != len(records):
                raise ValueError(f"{mf.shape[0]} meta-features for {len(records)} records")
            object.__setattr__(self, "metafeatures", mf)
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "_index", index)

    @property
    def K(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def position(self, record_id: str) -> int:
        try:
            return self._index[record_id]
        except KeyError:
            raise UnknownRecordError(record_id) from None

    def record(self, record_id: str) -> DatasetRecord:
        return self.records[self.position(record_id)]

    def error_matrix(self) -> np.ndarray:
        return np.stack([r.errors for r in self.records])

    def with_metafeatures(self, mf) -> "HistoryStore":
        return replace(self, metafeatures=np.asarray(mf, dtype=float))

    def subset(self, ids: Sequence[str]) -> "HistoryStore":
        pos = [self.position(i) for i in ids]
        mf = None if self.metafeatures is None else self.metafeatures[pos]
        return HistoryStore(self.grid, tuple(self.records[p] for p in pos), mf)

    def __eq__(self, other):
        if not isinstance(other, HistoryStore):
            return NotImplemented
        if (self.metafeatures is None) != (other.metafeatures is None):
            return False
        if self.metafeatures is not None and not np.array_equal(self.metafeatures, other.metafeatures):
            return False
        return self.grid == other.grid and self.records == other.records


def target_distance(store: HistoryStore, i: str, j: str) -> float:
    """L1 distance between the error vectors of records ``i`` and ``j``."""
    a = store.record(i).errors
    b = store.record(j).errors
    return float(np.sum(np.abs(a - b)))


def target_distance_matrix(store: HistoryStore) -> np.ndarray:
    E = store.error_matrix()
    return np.abs(E[:, None, :] - E[None, :, :]).sum(axis=-1)


def observed_normalized(grid: EvaluationGrid, dim: int) -> np.ndarray:
    """Grid coordinates of one dimension min-max scaled over the grid itself."""
    col = grid.points[:, dim]
    lo, hi = col.min(), col.max()
    if not hi > lo:
        raise DegenerateDimensionError(f"dimension {dim} is constant over the grid")
    return (col - lo) / (hi - lo)


def ccov(record: DatasetRecord, grid: EvaluationGrid, dim: int) -> float:
    """Error-weighted mean of the grid's normalized coordinate in ``dim``."""
    total = float(np.sum(record.errors))
    if not total > 0:
        raise UndefinedCCoVError(f"record {record.id!r} has all-zero errors")
    return float(np.dot(observed_normalized(grid, dim), record.errors) / total)


def subtracted_ccov(record: DatasetRecord, grid: EvaluationGrid) -> np.ndarray:
    return np.array([ccov(record, grid, i) - 0.5 for i in range(grid.space.d)])


def best_on_grid(store: HistoryStore, record_id: str) -> np.ndarray:
    """Grid point with the lowest error for the record; first index wins ties."""
    errors = store.record(record_id).errors
    return store.grid.points[int(np.argmin(errors))].copy()


# -- persistence -------------------------------------------------------------


def _write_f32(path: Path, data: np.ndarray):
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*data.shape))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def _read_f32(path: Path, rid: str) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise StoreParseError(f"record {rid!r}: instance file {path} lacks its header")
    count, dim = _HEADER.unpack_from(raw)
    body = raw[_HEADER.size :]
    if len(body) != 4 * count * dim:
        raise StoreParseError(
            f"record {rid!r}: instance file {path} declares {count}x{dim} but holds {len(body)} bytes"
        )
    return np.frombuffer(body, dtype="<f4").reshape(count, dim).astype(float)


def store_to_json(store: HistoryStore, binary_dir: Path | None = None, stem: str = "store") -> dict:
    records = []
    for rec in store.records:
        inst = {"dim": rec.instances.dim, "labels": rec.instances.labels.tolist()}
        if binary_dir is None:
            inst["data"] = rec.instances.data.tolist()
        else:
            name = f"{stem}.{rec.id}.f32"
            _write_f32(binary_dir / name, rec.instances.data)
            inst["file"] = name
            inst["count"] = rec.instances.count
        entry = {"id": rec.id, "fraction": rec.fraction}
        if rec.parent is not None:
            entry["parent"] = rec.parent
        entry["errors"] = rec.errors.tolist()
        entry["instances"] = inst
        records.append(entry)
    return {
        "space": store.grid.space.to_json(),
        "grid": store.grid.points.tolist(),
        "records": records,
    }


def save_store(store: HistoryStore, path, binary_instances: bool = False):
    """Write ``store`` as JSON; optionally put instance matrices in ``.f32`` side files."""
    path = Path(path)
    binary_dir = path.parent if binary_instances else None
    doc = store_to_json(store, binary_dir, path.stem)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def _field(doc, key, where):
    try:
        return doc[key]
    except (KeyError, TypeError):
        raise StoreParseError(f"{where}: missing field {key!r}") from None


def store_from_json(doc: dict, base_dir: Path | None = None) -> HistoryStore:
    base_dir = Path(base_dir or ".")
    try:
        space = HyperparameterSpace.from_json(_field(doc, "space", "store"))
    except (KeyError, TypeError, ValueError) as exc:
        raise StoreParseError(f"store: bad space: {exc}") from None
    try:
        grid = EvaluationGrid(np.asarray(_field(doc, "grid", "store"), dtype=float), space)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, StoreParseError):
            raise
        raise StoreParseError(f"store: bad grid: {exc}") from None
    records = []
    raw_records = _field(doc, "records", "store")
    for pos, r in enumerate(raw_records):
        rid = r.get("id", f"#{pos}") if isinstance(r, dict) else f"#{pos}"
        where = f"record {rid!r}"
        errors = _field(r, "errors", where)
        if len(errors) != grid.n:
            raise StoreParseError(f"{where}: field 'errors' has {len(errors)} values, grid has {grid.n}")
        inst = _field(r, "instances", where)
        labels = _field(inst, "labels", f"{where} instances")
        dim = _field(inst, "dim", f"{where} instances")
        if "file" in inst:
            data = _read_f32(base_dir / inst["file"], rid)
        else:
            data = np.asarray(_field(inst, "data", f"{where} instances"), dtype=float)
        if data.ndim != 2 or data.shape[1] != dim:
            raise StoreParseError(f"{where}: instances do not match declared dim {dim}")
        try:
            records.append(
                DatasetRecord(
                    _field(r, "id", where),
                    errors,
                    Instances(data, labels),
                    float(r.get("fraction", 1.0)),
                    r.get("parent"),
                )
            )
        except ValueError as exc:
            raise StoreParseError(f"{where}: {exc}") from None
    try:
        return HistoryStore(grid, tuple(records))
    except ValueError as exc:
        raise StoreParseError(f"store: {exc}") from None


def load_store(path) -> HistoryStore:
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StoreParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return store_from_json(doc, path.parent)
