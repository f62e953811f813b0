from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vbhbn.spin import CompositeSpace, SpinSpec, embed, site_operators, spin_operators

SPINS = range(1, 7)


def comm(a, b):
    return a @ b - b @ a


@pytest.mark.parametrize("two_s", SPINS)
def test_commutation_relations(two_s):
    o = spin_operators(SpinSpec(two_s))
    assert np.allclose(comm(o.x, o.y), 1j * o.z, atol=1e-12)
    assert np.allclose(comm(o.y, o.z), 1j * o.x, atol=1e-12)
    assert np.allclose(comm(o.z, o.x), 1j * o.y, atol=1e-12)
    assert np.allclose(comm(o.z, o.plus), o.plus, atol=1e-12)
    assert np.allclose(comm(o.plus, o.minus), 2 * o.z, atol=1e-12)


@pytest.mark.parametrize("two_s", SPINS)
def test_casimir(two_s):
    spec = SpinSpec(two_s)
    o = spin_operators(spec)
    s2 = o.x @ o.x + o.y @ o.y + o.z @ o.z
    assert np.allclose(s2, spec.s * (spec.s + 1) * np.eye(spec.dim), atol=1e-12)


@pytest.mark.parametrize("two_s", SPINS)
def test_ladder_coefficients(two_s):
    # <m+1|S+|m> = sqrt((s-m)(s+m+1)), checked element by element
    spec = SpinSpec(two_s)
    o = spin_operators(spec)
    s = spec.s
    m = spec.projections()
    for j in range(1, spec.dim):
        expected = np.sqrt((s - m[j]) * (s + m[j] + 1))
        assert o.plus[j - 1, j] == pytest.approx(expected, abs=1e-14)
    assert np.count_nonzero(np.abs(o.plus) > 1e-14) == spec.dim - 1
    assert np.allclose(o.minus, o.plus.conj().T)


@pytest.mark.parametrize("two_s", SPINS)
def test_hermitian_and_traceless(two_s):
    o = spin_operators(SpinSpec(two_s))
    for a in (o.x, o.y, o.z):
        assert np.allclose(a, a.conj().T)
        assert abs(np.trace(a)) < 1e-12


def test_basis_order_is_m_descending():
    assert list(SpinSpec(3).projections()) == [1.5, 0.5, -0.5, -1.5]


@settings(max_examples=40, deadline=None)
@given(
    dims=st.lists(st.integers(1, 6), min_size=1, max_size=3),
    data=st.data(),
)
def test_embedding_is_homomorphism(dims, data):
    space = CompositeSpace([SpinSpec(d) for d in dims])
    site = data.draw(st.integers(0, len(dims) - 1))
    o = spin_operators(space.factors[site])
    ex, ey, ez = (embed(a, site, space) for a in (o.x, o.y, o.z))
    assert np.allclose(comm(ex, ey), 1j * ez, atol=1e-12)
    assert np.allclose(embed(o.x @ o.y, site, space), ex @ ey, atol=1e-12)
    # trace picks up the dimension of the other factors
    rest = space.dim // space.dims[site]
    zz = o.z @ o.z
    assert np.trace(embed(zz, site, space)) == pytest.approx(rest * np.trace(zz))


def test_embedded_sites_commute():
    space = CompositeSpace([SpinSpec(2), SpinSpec(1), SpinSpec(3)])
    a, b = site_operators(space, 0), site_operators(space, 2)
    for p in a[:3]:
        for q in b[:3]:
            assert np.allclose(comm(p, q), 0)


def test_embed_matches_explicit_kron():
    space = CompositeSpace([SpinSpec(2), SpinSpec(1)])
    sx = spin_operators(SpinSpec(1)).x
    expected = reduce(np.kron, [np.eye(3), sx])
    assert np.allclose(embed(sx, 1, space), expected)


def test_embed_dimension_mismatch_names_site():
    space = CompositeSpace([SpinSpec(2), SpinSpec(1)])
    with pytest.raises(ValueError, match="site 1"):
        embed(np.eye(3), 1, space)
    with pytest.raises(ValueError):
        embed(np.eye(3), 5, space)


@pytest.mark.parametrize("bad", [0, -1, 13, 1.5])
def test_invalid_spin_rejected(bad):
    with pytest.raises(ValueError):
        SpinSpec(bad)
