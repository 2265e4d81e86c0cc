import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinmodel.fields import (Grid1D, GridMismatchError, SpaceTimeField, SteadyField, excited_range,
                              mismatch_spacetime, mismatch_steady_weighted, read_field_csv,
                              write_field_csv)


def _field(values, grid):
    return SpaceTimeField(np.asarray(values, float), grid)


def test_mismatch_identity_is_zero(rng):
    g = Grid1D.uniform(7, 5)
    a = _field(rng.normal(size=g.shape), g)
    assert mismatch_spacetime(a, a) == 0.0


def test_mismatch_constant_offset_unit_grid():
    g = Grid1D.uniform(13, 9, length=1.0, horizon=1.0)
    a = _field(np.zeros(g.shape), g)
    delta = 0.37
    assert mismatch_spacetime(a, _field(np.full(g.shape, delta), g)) == pytest.approx(delta**2, rel=1e-12)


def test_mismatch_single_entry():
    g = Grid1D.uniform(10, 10, length=1.0, horizon=1.0)
    a = np.zeros(g.shape)
    b = a.copy()
    delta = 0.5
    b[3, 4] = delta
    assert mismatch_spacetime(_field(a, g), _field(b, g)) == pytest.approx(0.01 * delta**2, rel=1e-12)


def test_mismatch_grid_mismatch_raises():
    a = _field(np.zeros((4, 5)), Grid1D.uniform(5, 4))
    b = _field(np.zeros((4, 6)), Grid1D.uniform(6, 4))
    with pytest.raises(GridMismatchError):
        mismatch_spacetime(a, b)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_mismatch_symmetric_nonnegative_quadratic(nx, nt, delta, seed):
    g = Grid1D.uniform(nx, nt, length=2.0, horizon=0.5)
    r = np.random.default_rng(seed)
    a = _field(r.normal(size=g.shape), g)
    b = _field(r.normal(size=g.shape), g)
    assert mismatch_spacetime(a, b) == pytest.approx(mismatch_spacetime(b, a), rel=1e-14)
    assert mismatch_spacetime(a, b) >= 0
    one = mismatch_spacetime(a, _field(a.values + delta, g))
    two = mismatch_spacetime(a, _field(a.values + 2 * delta, g))
    assert two == pytest.approx(4 * one, rel=1e-12, abs=1e-300)


def _steady(values, grid):
    return SteadyField(np.asarray(values, float), grid)


def test_steady_weighted_examples():
    g = Grid1D.uniform(4, length=1.0)
    z = _steady(np.zeros(4), g)
    # squared cell-weighted norms 4 and 9 (dx = 0.25)
    f1 = _steady(np.full(4, 2.0), g)
    f2 = _steady(np.full(4, 3.0), g)
    assert mismatch_steady_weighted([f1, f2], [f1, f2], [1, 1]) == 0.0
    assert mismatch_steady_weighted([f1, f2], [z, z], [1, 1]) == pytest.approx(13.0)
    assert mismatch_steady_weighted([f1, f2], [z, z], [2, 0.5]) == pytest.approx(12.5)


@pytest.mark.parametrize("w", [0.0, -1.0])
def test_steady_weighted_rejects_nonpositive_weight(w):
    g = Grid1D.uniform(3)
    f = _steady(np.ones(3), g)
    with pytest.raises(ValueError):
        mismatch_steady_weighted([f], [f], [w])


def test_excited_range_examples():
    g = Grid1D.uniform(3, 2)
    assert excited_range(_field(np.full(g.shape, 0.3), g)) == (0.3, 0.3)
    assert excited_range(_field([[0.1, 0.5, 0.9], [0.5, 0.5, 0.5]], g)) == (0.1, 0.9)
    with pytest.raises(ValueError):
        excited_range(np.zeros(0))


def test_field_rejects_bad_shape_and_nonfinite():
    g = Grid1D.uniform(3, 2)
    with pytest.raises(ValueError):
        SpaceTimeField(np.zeros((3, 3)), g)
    with pytest.raises(ValueError):
        SpaceTimeField(np.full(g.shape, np.nan), g)


def test_grid_immutable_and_roundtrip():
    g = Grid1D.uniform(5, 3, length=2.0, horizon=0.3, x0=-1.0)
    with pytest.raises(ValueError):
        g.cell_widths[0] = 1.0
    h = Grid1D.from_dict(g.to_dict())
    assert h.same_as(g)
    assert g.faces[0] == -1.0 and g.faces[-1] == pytest.approx(1.0)


def test_csv_roundtrip(tmp_path, rng):
    g = Grid1D.uniform(6, 4, length=1.0, horizon=0.4)
    f = _field(rng.normal(size=g.shape), g)
    p = tmp_path / "f.csv"
    write_field_csv(p, f)
    assert p.read_text().splitlines()[0] == "t,x,value"
    back = read_field_csv(p)
    assert np.array_equal(back.values, f.values)
    assert back.grid.same_as(g, rtol=1e-9)
    assert np.array_equal(read_field_csv(p, g).values, f.values)
    with pytest.raises(GridMismatchError):
        read_field_csv(p, Grid1D.uniform(6, 4, length=2.0))
