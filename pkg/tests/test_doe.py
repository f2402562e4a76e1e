import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mffield import sim
from mffield.doe import BoxDomain, lhs, nested_lhs, remove_nearest


def _strata_ok(x, lower, upper):
    n = x.shape[0]
    idx = np.floor((x - lower) / (upper - lower) * n).astype(int)
    return all(sorted(idx[:, j]) == list(range(n)) for j in range(x.shape[1]))


def test_single_point_unit_box():
    x = lhs(1, BoxDomain.unit(3), seed=0)
    assert x.shape == (1, 3) and np.all((x >= 0) & (x <= 1))


def test_one_per_decile():
    x = lhs(10, BoxDomain.unit(1), seed=1)
    assert sorted(np.floor(x[:, 0] * 10).astype(int)) == list(range(10))


def test_vff_stratification():
    x = lhs(8, sim.DOMAIN, seed=2)
    assert _strata_ok(x, sim.DOMAIN.lower, sim.DOMAIN.upper)


def test_invalid_sizes():
    with pytest.raises(ValueError):
        lhs(0, BoxDomain.unit(2))
    with pytest.raises(ValueError, match="n2"):
        nested_lhs(5, 4, BoxDomain.unit(2))
    with pytest.raises(ValueError):
        BoxDomain([0.0, 1.0], [1.0, 1.0])


def test_equal_sizes_share_design():
    d = nested_lhs(8, 8, sim.DOMAIN, seed=3)
    assert np.array_equal(d.u1, d.u2)


def test_nested_inclusion():
    d = nested_lhs(8, 40, sim.DOMAIN, seed=4)
    assert d.u2.shape == (40, 4)
    assert np.array_equal(d.u2[:8], d.u1)
    assert {r.tobytes() for r in d.u1} <= {r.tobytes() for r in d.u2}


def test_nearest_removal_example():
    kept = remove_nearest(np.array([[0.1], [0.45], [0.9]]), np.array([[0.5]]))
    assert kept[:, 0].tolist() == [0.1, 0.9]


def test_nearest_removal_tie_goes_to_lowest_index():
    kept = remove_nearest(np.array([[0.4], [0.6]]), np.array([[0.5]]))
    assert kept[:, 0].tolist() == [0.6]


def test_determinism():
    a = nested_lhs(6, 30, sim.DOMAIN, seed=11)
    b = nested_lhs(6, 30, sim.DOMAIN, seed=11)
    assert np.array_equal(a.u2, b.u2)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 30), st.integers(1, 5), st.integers(0, 2**31))
def test_nested_properties(n1, extra, d, seed):
    dom = BoxDomain(np.zeros(d), np.arange(1, d + 1, dtype=float))
    des = nested_lhs(n1, n1 + extra, dom, seed)
    assert des.n2 == n1 + extra
    assert np.array_equal(des.u2[:n1], des.u1)
    assert np.all(des.u2 >= dom.lower) and np.all(des.u2 <= dom.upper)
    assert _strata_ok(des.u1, dom.lower, dom.upper)
