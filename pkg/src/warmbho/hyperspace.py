"""Hyperparameter spaces and the unit-cube embedding used by the optimizer.

A point in a space is a plain 1-D float array in raw units. Three dimension
kinds are supported:

``real``
    a closed real interval.
``int_cast``
    a real interval whose value is cast to an integer only when the target
    model is built (``batch_size`` in the CNN space).
``int_set``
    an explicit, strictly increasing set of integers. For modelling it lives on
    the continuous axis ``[min(set), max(set)]`` and is snapped to the nearest
    member on the way back from the unit cube.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError, DomainError

KINDS = ("real", "int_cast", "int_set")


@dataclass(frozen=True)
class DimensionSpec:
    name: str
    lower: float
    upper: float
    kind: str = "real"
    members: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dimension kind {self.kind!r}")
        if self.kind == "int_set":
            members = tuple(int(m) for m in self.members)
            if not members:
                raise ValueError(f"{self.name}: integer set is empty")
            if any(b <= a for a, b in zip(members, members[1:])):
                raise ValueError(f"{self.name}: integer set must be strictly increasing")
            object.__setattr__(self, "members", members)
            object.__setattr__(self, "lower", float(members[0]))
            object.__setattr__(self, "upper", float(members[-1]))
        else:
            object.__setattr__(self, "lower", float(self.lower))
            object.__setattr__(self, "upper", float(self.upper))
        if not self.upper > self.lower:
            raise ValueError(f"{self.name}: degenerate range [{self.lower}, {self.upper}]")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        if not np.isfinite(value):
            return False
        if self.kind == "int_set":
            return float(value).is_integer() and int(value) in self.members
        return self.lower <= value <= self.upper

    def snap(self, value: float) -> float:
        """Nearest member for integer sets; identity otherwise."""
        if self.kind != "int_set":
            return float(value)
        members = np.asarray(self.members, dtype=float)
        # argmin picks the lower member on exact midpoints
        return float(members[np.argmin(np.abs(members - value))])

    def to_json(self) -> dict:
        out = {"name": self.name, "kind": self.kind, "lower": self.lower, "upper": self.upper}
        if self.kind == "int_set":
            out["lower"] = int(self.lower)
            out["upper"] = int(self.upper)
            out["set"] = list(self.members)
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "DimensionSpec":
        kind = doc.get("kind", "real")
        if kind == "int_set":
            return cls(doc["name"], 0.0, 0.0, kind, tuple(doc["set"]))
        return cls(doc["name"], doc["lower"], doc["upper"], kind)


@dataclass(frozen=True)
class HyperparameterSpace:
    dims: tuple[DimensionSpec, ...]
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        dims = tuple(self.dims)
        if not dims:
            raise ValueError("a space needs at least one dimension")
        names = [d.name for d in dims]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate dimension names in {names}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [dim.name for dim in self.dims]

    @property
    def lower(self) -> np.ndarray:
        return np.array([dim.lower for dim in self.dims])

    @property
    def upper(self) -> np.ndarray:
        return np.array([dim.upper for dim in self.dims])

    def index(self, name: str) -> int:
        return self._index[name]

    def to_json(self) -> dict:
        return {"dims": [dim.to_json() for dim in self.dims]}

    @classmethod
    def from_json(cls, doc: dict) -> "HyperparameterSpace":
        return cls(tuple(DimensionSpec.from_json(d) for d in doc["dims"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, text: str) -> "HyperparameterSpace":
        return cls.from_json(json.loads(text))


def _check_length(space: HyperparameterSpace, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != space.d:
        raise DimensionMismatchError(
            f"vector has shape {v.shape}, space has {space.d} dimensions"
        )
    return v


def validate(space: HyperparameterSpace, v: Sequence[float]) -> bool:
    """True iff every coordinate of ``v`` lies in its dimension's range.

    ``int_cast`` coordinates are valid as reals; the cast happens when the
    target model is configured.
    """
    v = _check_length(space, v)
    return all(dim.contains(x) for dim, x in zip(space.dims, v))


def normalize(space: HyperparameterSpace, v: Sequence[float]) -> np.ndarray:
    """Map raw coordinates affinely onto [0, 1] using the space bounds."""
    v = _check_length(space, v)
    if not validate(space, v):
        raise DomainError(f"{list(v)} lies outside the space")
    return (v - space.lower) / (space.upper - space.lower)


def denormalize(space: HyperparameterSpace, u: Sequence[float]) -> np.ndarray:
    """Inverse of :func:`normalize`; integer-set coordinates snap to a member."""
    u = _check_length(space, u)
    if not np.all(np.isfinite(u)) or np.any(u < 0.0) or np.any(u > 1.0):
        raise DomainError(f"unit-cube vector {list(u)} has coordinates outside [0, 1]")
    raw = space.lower + u * (space.upper - space.lower)
    return np.array([dim.snap(x) for dim, x in zip(space.dims, raw)])


def snap_unit(space: HyperparameterSpace, u: np.ndarray) -> np.ndarray:
    """Round a batch of unit-cube points to the points actually evaluated.

    Works on arrays of shape ``(..., d)``; real dimensions pass through.
    """
    u = np.array(u, dtype=float, copy=True)
    for i, dim in enumerate(space.dims):
        if dim.kind != "int_set":
            continue
        members = (np.asarray(dim.members, dtype=float) - dim.lower) / dim.width
        col = u[..., i]
        u[..., i] = members[np.argmin(np.abs(col[..., None] - members), axis=-1)]
    return u


def canonical_cnn_space() -> HyperparameterSpace:
    """The six-dimensional CNN hyperparameter space used in the experiments."""
    return HyperparameterSpace(
        (
            DimensionSpec("log10_learning_rate", -5.0, 0.0, "real"),
            DimensionSpec("log10_decay_rate", -8.0, -4.0, "real"),
            DimensionSpec("batch_size", 100.0, 400.0, "int_cast"),
            DimensionSpec("num_layers_conv", 0, 0, "int_set", tuple(range(1, 10))),
            DimensionSpec("num_layers_fc", 0, 0, "int_set", (1, 2, 3)),
            DimensionSpec("dropout_rate", 0.0, 0.9, "real"),
        )
    )


def cast_for_model(space: HyperparameterSpace, v: Sequence[float]) -> dict:
    """Name -> value mapping with integer kinds cast, ready to configure a model."""
    v = _check_length(space, v)
    out = {}
    for dim, x in zip(space.dims, v):
        out[dim.name] = int(x) if dim.kind != "real" else float(x)
    return out
