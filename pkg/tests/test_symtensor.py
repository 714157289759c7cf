import itertools
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from foldmix.groups import build_group, parse_group_spec
from foldmix.molien import molien_generic
from foldmix.symtensor import (SymTensor, canonical_indices, invariant_basis,
                               reynolds_matrix, reynolds_project, sym_dim)

RNG = np.random.default_rng(5150)


# --- independent full-array oracle -----------------------------------------

def full_transform(Q, T_full):
    """(Q.)^{tensor m} T computed with einsum, one letter per axis."""
    m = T_full.ndim
    letters = "abcdefgh"[:m]
    out_letters = "ijklnopq"[:m]
    spec = ",".join(f"{o}{a}" for o, a in zip(out_letters, letters))
    return np.einsum(f"{spec},{letters}->{out_letters}", *([Q] * m), T_full)


def reynolds_full(group, T_full):
    acc = np.zeros_like(T_full)
    for e in group.elements:
        acc += full_transform(e.matrix, T_full)
    return acc / group.order


def random_symtensor(d, m):
    full = RNG.standard_normal((d,) * m)
    # symmetrize
    acc = np.zeros_like(full)
    for perm in itertools.permutations(range(m)):
        acc += np.transpose(full, perm)
    return SymTensor.from_full(acc / math.factorial(m))


# ----------------------------------------------------------------------------

def test_symtensor_round_trip_and_dims():
    for d, m in [(1, 3), (2, 2), (3, 4), (2, 0)]:
        assert sym_dim(d, m) == len(canonical_indices(d, m))
        T = random_symtensor(d, m) if m else SymTensor(d, 0, [1.3])
        back = SymTensor.from_full(T.to_full())
        assert_allclose(back.coords, T.coords, atol=1e-12)


def test_inner_product_matches_full_array():
    for d, m in [(2, 2), (2, 3), (3, 2)]:
        T = random_symtensor(d, m)
        U = random_symtensor(d, m)
        assert T.inner(U) == pytest.approx(np.sum(T.to_full() * U.to_full()))


def test_reynolds_trivial_group_is_identity():
    g = build_group("trivial", 2)
    T = random_symtensor(2, 3)
    assert_allclose(reynolds_project(g, T).coords, T.coords, atol=1e-12)


def test_reynolds_sign_flips_kills_odd_degree():
    g = build_group("sign_flips", 2)
    e1 = SymTensor.basis(2, 1, (0,))
    assert_allclose(reynolds_project(g, e1).coords, 0.0, atol=1e-14)


def test_reynolds_sym2_hand_example():
    # averaging the two permutation images of x1^2 gives (1/2, 0, 1/2)
    g = build_group("sym", 2)
    T = SymTensor.basis(2, 2, (0, 0))
    proj = reynolds_project(g, T)
    assert_allclose(proj.coords, [0.5, 0.0, 0.5], atol=1e-12)
    # matches the independent full-array average
    assert_allclose(proj.to_full(), reynolds_full(g, T.to_full()), atol=1e-12)


GROUPS = ["signflips:2", "sym:3", "hyperoct:2", "dihedral:3", "cyclic:4:1,1"]


@pytest.mark.parametrize("spec", GROUPS)
def test_reynolds_matches_full_array_oracle(spec):
    g = parse_group_spec(spec)
    for m in (1, 2, 3):
        T = random_symtensor(g.p, m)
        ours = reynolds_project(g, T).to_full()
        assert_allclose(ours, reynolds_full(g, T.to_full()), atol=1e-10)


@pytest.mark.parametrize("spec", GROUPS)
def test_reynolds_laws(spec):
    g = parse_group_spec(spec)
    for m in (1, 2, 3):
        T = random_symtensor(g.p, m)
        U = random_symtensor(g.p, m)
        PT = reynolds_project(g, T)
        # idempotence
        assert_allclose(reynolds_project(g, PT).coords, PT.coords, atol=1e-10)
        # self-adjointness in the canonical inner product
        assert reynolds_project(g, T).inner(U) == pytest.approx(
            T.inner(reynolds_project(g, U)), abs=1e-10)
        # equivariance collapse
        e = g.elements[RNG.integers(0, g.order)]
        moved = SymTensor.from_full(full_transform(e.matrix, T.to_full()))
        assert_allclose(reynolds_project(g, moved).coords, PT.coords, atol=1e-10)


def test_invariant_basis_sign_flips():
    g = build_group("sign_flips", 2)
    b = invariant_basis(g, 2, 2)
    assert b.dim == 2  # [t^2] = d
    # spanned by x1^2 and x2^2: reconstruction of any combo has zero x1x2 coord
    y = RNG.standard_normal(2)
    coords = b.reconstruct(y)
    assert abs(coords[1]) <= 1e-12
    # orthonormal in the canonical inner product
    tens = b.tensors()
    for i in range(2):
        for j in range(2):
            assert tens[i].inner(tens[j]) == pytest.approx(float(i == j), abs=1e-10)


def test_invariant_basis_hyperoct_brute_force():
    # brute-force projector on the 3-dim Sym^2: rank 1, direction x1^2 + x2^2
    g = build_group("hyperoctahedral", 2)
    R = reynolds_matrix(g, 2)
    assert np.linalg.matrix_rank(R, tol=1e-9) == 1
    b = invariant_basis(g, 2, 2)
    assert b.dim == 1
    v = b.vectors[:, 0]
    expected = np.array([1.0, 0.0, 1.0]) / np.sqrt(2.0)
    assert_allclose(v, expected, atol=1e-10)


def test_invariant_basis_degree_zero_convention():
    g = build_group("dihedral", 5)
    b = invariant_basis(g, 2, 0)
    assert b.dim == 1


@pytest.mark.parametrize("spec", GROUPS)
def test_invariant_basis_fixed_by_group(spec):
    g = parse_group_spec(spec)
    for m in (2, 3, 4):
        b = invariant_basis(g, g.p, m)
        for j in range(b.dim):
            T = b.vectors[:, j]
            full = SymTensor(g.p, m, T).to_full()
            for e in g.elements:
                moved = full_transform(e.matrix, full)
                assert np.max(np.abs(moved - full)) <= 1e-9


@pytest.mark.parametrize("spec", GROUPS)
def test_projector_trace_equals_molien(spec):
    g = parse_group_spec(spec)
    series = molien_generic(g, 5)
    for m in range(6):
        tr = float(np.trace(reynolds_matrix(g, m)))
        assert round(tr) == series[m]
        assert abs(tr - round(tr)) <= 1e-9


def test_sizing_guard():
    g = build_group("sign_flips", 2)
    with pytest.raises(ValueError):
        invariant_basis(g, 2, 2 * 10 ** 5)
