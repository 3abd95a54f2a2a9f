import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warmbho.errors import DimensionMismatchError, DomainError
from warmbho.hyperspace import (
    DimensionSpec,
    HyperparameterSpace,
    canonical_cnn_space,
    cast_for_model,
    denormalize,
    normalize,
    snap_unit,
    validate,
)


def test_canonical_space_matches_table(cnn_space):
    assert cnn_space.d == 6
    assert cnn_space.names == [
        "log10_learning_rate",
        "log10_decay_rate",
        "batch_size",
        "num_layers_conv",
        "num_layers_fc",
        "dropout_rate",
    ]
    lr, decay, batch, conv, fc, dropout = cnn_space.dims
    assert (lr.lower, lr.upper, lr.kind) == (-5.0, 0.0, "real")
    assert (decay.lower, decay.upper) == (-8.0, -4.0)
    assert batch.kind == "int_cast" and (batch.lower, batch.upper) == (100.0, 400.0)
    assert conv.members == tuple(range(1, 10))
    assert fc.members == (1, 2, 3)
    assert (dropout.lower, dropout.upper) == (0.0, 0.9)


def test_validate_examples(cnn_space):
    assert validate(cnn_space, [-3.0, -6.0, 250.0, 5, 2, 0.5])
    assert not validate(cnn_space, [1.0, -6.0, 250.0, 5, 2, 0.5])
    with pytest.raises(DimensionMismatchError):
        validate(cnn_space, [-3.0, -6.0, 250.0, 5, 2])


def test_int_cast_accepts_reals_and_int_set_rejects_them(cnn_space):
    assert validate(cnn_space, [-3.0, -6.0, 250.7, 5, 2, 0.5])
    assert not validate(cnn_space, [-3.0, -6.0, 250.0, 5.5, 2, 0.5])
    assert cast_for_model(cnn_space, [-3.0, -6.0, 250.7, 5, 2, 0.5])["batch_size"] == 250


def test_normalize_examples():
    space = HyperparameterSpace((DimensionSpec("a", -5, 0), DimensionSpec("b", 0, 0, "int_set", tuple(range(1, 10)))))
    assert np.allclose(normalize(space, [-5.0, 1]), [0.0, 0.0])
    assert np.allclose(normalize(space, [-2.5, 9]), [0.5, 1.0])


def test_denormalize_endpoints(cnn_space):
    assert np.array_equal(denormalize(cnn_space, np.zeros(6)), cnn_space.lower)
    assert np.array_equal(denormalize(cnn_space, np.ones(6)), cnn_space.upper)


def test_denormalize_snaps_to_nearest_member():
    dim = DimensionSpec("n", 0, 0, "int_set", (1, 2, 3))
    space = HyperparameterSpace((dim,))
    # oracle: enumerate members, pick the one nearest the affine image
    raw = 1 + 0.49 * 2
    expected = min(dim.members, key=lambda m: abs(m - raw))
    assert expected == 2
    assert denormalize(space, [0.49])[0] == expected


def test_denormalize_rejects_out_of_range(cnn_space):
    with pytest.raises(DomainError):
        denormalize(cnn_space, [0.5] * 5 + [1.2])


def test_construction_rejects_degenerate_and_duplicates():
    with pytest.raises(ValueError):
        DimensionSpec("a", 1.0, 1.0)
    with pytest.raises(ValueError):
        DimensionSpec("s", 0, 0, "int_set", (3, 2))
    with pytest.raises(ValueError):
        DimensionSpec("s", 0, 0, "int_set", ())
    with pytest.raises(ValueError):
        HyperparameterSpace((DimensionSpec("a", 0, 1), DimensionSpec("a", 0, 2)))


def test_json_round_trip(cnn_space):
    doc = json.loads(cnn_space.dumps())
    assert doc["dims"][3] == {"name": "num_layers_conv", "kind": "int_set", "lower": 1, "upper": 9, "set": list(range(1, 10))}
    assert doc["dims"][2]["kind"] == "int_cast"
    assert HyperparameterSpace.loads(cnn_space.dumps()) == cnn_space


def test_snap_unit_matches_denormalize(cnn_space, rng):
    U = rng.random((50, 6))
    snapped = snap_unit(cnn_space, U)
    for u, s in zip(U, snapped):
        assert np.allclose(normalize(cnn_space, denormalize(cnn_space, u)), s, atol=1e-12)


REAL_SPACE = HyperparameterSpace(
    (DimensionSpec("a", -5, 0), DimensionSpec("b", -8, -4), DimensionSpec("c", 100, 400, "int_cast"), DimensionSpec("d", 0, 0.9))
)
unit = st.floats(0.0, 1.0, allow_nan=False)


@given(st.lists(unit, min_size=4, max_size=4))
def test_round_trip_on_real_dims(u):
    back = normalize(REAL_SPACE, denormalize(REAL_SPACE, u))
    assert np.max(np.abs(back - np.asarray(u))) <= 1e-12


@given(unit, unit, st.integers(0, 3))
def test_normalize_monotone(a, b, i):
    lo, hi = sorted((a, b))
    u_lo, u_hi = np.full(4, 0.5), np.full(4, 0.5)
    u_lo[i], u_hi[i] = lo, hi
    v_lo, v_hi = denormalize(REAL_SPACE, u_lo), denormalize(REAL_SPACE, u_hi)
    assert normalize(REAL_SPACE, v_lo)[i] <= normalize(REAL_SPACE, v_hi)[i]


@settings(max_examples=60)
@given(st.integers(0, 5), st.floats(1e-6, 10.0), st.booleans())
def test_validate_rejects_single_perturbation(i, delta, above):
    space = canonical_cnn_space()
    v = np.array([-3.0, -6.0, 250.0, 5, 2, 0.5])
    dim = space.dims[i]
    v[i] = dim.upper + delta if above else dim.lower - delta
    assert not validate(space, v)
