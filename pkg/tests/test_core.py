import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from causalnav.core import (
    Dataset,
    FeatureScaler,
    QueryPoint,
    Sample,
    State,
    StateShift,
    advance,
    build_action_grid,
    standardized_distance,
    state_shift,
    wrap_angle,
    wrap_angle_array,
)

angles = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


def test_wrap_angle_identity():
    assert wrap_angle(0.0) == 0.0


def test_wrap_angle_wraps_past_pi():
    assert wrap_angle(math.pi - 0.1 + 0.2) == pytest.approx(-math.pi + 0.1)


def test_wrap_angle_boundary_convention():
    # pi itself is in range, -pi is not
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(-3 * math.pi) == pytest.approx(math.pi)


def test_wrap_angle_rejects_nonfinite():
    with pytest.raises(ValueError):
        wrap_angle(float("nan"))
    with pytest.raises(ValueError):
        wrap_angle(float("inf"))


@given(angles)
def test_wrap_angle_range_and_idempotence(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert wrap_angle(w) == w


@given(angles)
def test_wrap_angle_congruence(a):
    w = wrap_angle(a)
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-6)
    assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-6)


def test_wrap_angle_array_matches_scalar():
    vals = np.array([0.0, math.pi, -math.pi, 5.0, -9.1, 12.6])
    out = wrap_angle_array(vals)
    for v, w in zip(vals, out):
        assert w == pytest.approx(wrap_angle(float(v)))


def test_state_shift_plain_difference():
    d = state_shift(State(0, 0, 0), State(1, 2, 0))
    assert (d.dx, d.dy, d.dtheta) == (1, 2, 0)


def test_state_shift_shortest_angular_path():
    d = state_shift(State(0, 0, math.pi - 0.1), State(0, 0, -math.pi + 0.1))
    assert d.dtheta == pytest.approx(0.2)


def test_state_shift_identity():
    s = State(3.0, -1.0, 0.7)
    d = state_shift(s, s)
    assert (d.dx, d.dy, d.dtheta) == (0, 0, 0)


@given(
    st.floats(-10, 10), st.floats(-10, 10), angles,
    st.floats(-5, 5), st.floats(-5, 5),
    st.floats(min_value=-math.pi + 1e-6, max_value=math.pi - 1e-6),
)
def test_state_shift_advance_roundtrip(x, y, th, dx, dy, dth):
    s = State(x, y, th)
    delta = StateShift(dx, dy, dth)
    rec = state_shift(s, advance(s, delta))
    assert rec.dx == pytest.approx(dx, abs=1e-9)
    assert rec.dy == pytest.approx(dy, abs=1e-9)
    assert rec.dtheta == pytest.approx(dth, abs=1e-9)


def _scaler(scale):
    scale = np.asarray(scale, dtype=float)
    return FeatureScaler(mean=np.zeros_like(scale), scale=scale)


def _qp(vec):
    return QueryPoint(State(vec[0], vec[1], vec[2]), tuple(vec[3:]))


def test_standardized_distance_zero_iff_equal():
    u = _qp([1.0, 2.0, 0.5, 3.0])
    assert standardized_distance(u, u, _scaler([1, 1, 1, 1])) == 0.0


def test_standardized_distance_scale():
    # single informative dimension with scale 2: values 0 and 4 are 2 apart
    u1 = _qp([0.0, 0.0, 0.0, 0.0])
    u2 = _qp([0.0, 0.0, 0.0, 4.0])
    assert standardized_distance(u1, u2, _scaler([1, 1, 1, 2])) == pytest.approx(2.0)


def test_standardized_distance_dimension_mismatch():
    u1 = _qp([0.0, 0.0, 0.0, 1.0])
    u2 = QueryPoint(State(0, 0, 0), (1.0, 2.0))
    with pytest.raises(ValueError):
        standardized_distance(u1, u2, _scaler([1, 1, 1, 1]))


coord = st.floats(-20, 20)


@given(st.lists(coord, min_size=8, max_size=8))
def test_standardized_distance_symmetry(vals):
    u1 = _qp(vals[:4])
    u2 = _qp(vals[4:])
    sc = _scaler([1.0, 2.0, 0.5, 3.0])
    assert standardized_distance(u1, u2, sc) == pytest.approx(
        standardized_distance(u2, u1, sc)
    )


@given(st.lists(coord, min_size=12, max_size=12))
def test_standardized_distance_triangle_inequality(vals):
    a, b, c = _qp(vals[:4]), _qp(vals[4:8]), _qp(vals[8:])
    sc = _scaler([1.0, 2.0, 0.5, 3.0])
    dab = standardized_distance(a, b, sc)
    dbc = standardized_distance(b, c, sc)
    dac = standardized_distance(a, c, sc)
    assert dac <= dab + dbc + 1e-9


def test_sample_caches_delta():
    u = _qp([0.0, 0.0, 0.0, 1.0])
    s = Sample(u=u, action_id=3, next_state=State(1.0, -2.0, 0.25))
    assert s.delta.dx == pytest.approx(1.0)
    assert s.delta.dy == pytest.approx(-2.0)
    assert s.delta.dtheta == pytest.approx(0.25)


def test_dataset_scaler_zero_variance_dims():
    samples = [
        Sample(u=_qp([0.0, 0.0, 0.0, float(i)]), action_id=0, next_state=State(0, 0, 0))
        for i in range(4)
    ]
    ds = Dataset(samples)
    # x, y, theta are constant across samples: scale snaps to 1
    assert np.all(ds.scaler.scale[:3] == 1.0)
    assert ds.scaler.scale[3] > 0.0
    assert len(ds) == 4


def test_dataset_rejects_empty():
    with pytest.raises(ValueError):
        Dataset([])


def test_build_action_grid_ids_unique_and_ordered():
    acts = build_action_grid([0, 2], [0.0, 0.5, -0.5])
    assert [a.id for a in acts] == list(range(6))
    assert acts[0].v == 0 and acts[0].omega == 0.0
    assert acts[5].v == 2 and acts[5].omega == -0.5
