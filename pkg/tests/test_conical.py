import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conic_climb.conical import (ConicityMatrix, Intersection, LeftRegion, MaxSteps, NotConical, NotDegenerate,
                                 conicity_matrix, cone_constant, is_conical, locate_intersection, stability_probe)
from conic_climb.model import OperatorTriple, assemble
from conic_climb.spectral import Disc, eigensystem

from conftest import rand_sym

SX = np.array([[0.0, 1.0], [1.0, 0.0]])
SZ = np.diag([1.0, -1.0])


def _rot(a):
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def two_level(seed):
    """Random 2x2 family and its unique degenerate point (traceless part of H vanishes)."""
    rng = np.random.default_rng(seed)
    h0, h1, h2 = (rand_sym(rng, 2) for _ in range(3))
    tl = lambda h: np.array([0.5 * (h[0, 0] - h[1, 1]), h[0, 1]])
    a = np.column_stack([tl(h1), tl(h2)])
    u = np.linalg.solve(a, -tl(h0))
    return OperatorTriple(h0, h1, h2), u


def test_conicity_pauli_standard_basis(pauli):
    m = conicity_matrix(pauli, [1.0, 0.0], [0.0, 1.0])
    np.testing.assert_allclose(m.m, [[0.0, -1.0], [1.0, 0.0]], atol=1e-15)
    assert m.det == pytest.approx(1.0, abs=1e-15)


def test_conicity_equal_controls_singular():
    m = OperatorTriple(np.zeros((2, 2)), SZ, SZ)
    assert conicity_matrix(m, [1, 0], [0, 1]).det == 0.0


def test_conicity_requires_orthonormal(pauli):
    with pytest.raises(ValueError):
        conicity_matrix(pauli, [1.0, 0.0], [1.0, 1e-3])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 2 * math.pi), st.booleans())
def test_det_invariant_under_rebasing(seed, a, reflect):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    m = OperatorTriple(rand_sym(rng, n), rand_sym(rng, n), rand_sym(rng, n))
    q, _ = np.linalg.qr(rng.standard_normal((n, 2)))
    r = _rot(a) @ (np.diag([1.0, -1.0]) if reflect else np.eye(2))
    q2 = q @ r
    d0 = abs(conicity_matrix(m, q[:, 0], q[:, 1]).det)
    d1 = abs(conicity_matrix(m, q2[:, 0], q2[:, 1]).det)
    assert abs(d0 - d1) < 1e-12 * max(1.0, m.lipschitz() ** 2)


def test_det_invariant_500_rebasings(three_xs, three):
    rng = np.random.default_rng(5)
    for x in three_xs:
        base = abs(x.det)
        for _ in range(500):
            v = x.limit_basis @ _rot(rng.uniform(0, 2 * math.pi))
            if rng.random() < 0.5:
                v = v[:, ::-1]
            assert abs(abs(conicity_matrix(three, v[:, 0], v[:, 1]).det) - base) < 1e-12


def test_is_conical_pauli(pauli, pauli_x):
    assert abs(pauli_x.det) == pytest.approx(1.0, abs=1e-12)
    # gap = 2|u| exactly, so every ray has slope 2
    assert pauli_x.cone_constant == pytest.approx(2.0, rel=1e-6)
    assert pauli_x.band == (0, 1)


def test_not_conical_and_not_degenerate(pauli):
    with pytest.raises(NotConical) as err:
        is_conical(OperatorTriple(np.zeros((2, 2)), SZ, 2 * SZ), (0.0, 0.0), 0)
    assert err.value.abs_det < 1e-12
    with pytest.raises(NotDegenerate):
        is_conical(pauli, (1.0, 0.0), 0)


def test_xi_pauli_half_angle(pauli_x):
    a = np.linspace(0, 2 * math.pi, 1024, endpoint=False)
    np.testing.assert_allclose(pauli_x.xi(a), a / 2, atol=1e-12)
    assert pauli_x.xi(0.0) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_xi_properties_random_two_level(seed):
    m, u = two_level(seed)
    x = is_conical(m, u, 0)
    a = np.linspace(0, 2 * math.pi, 2000, endpoint=False)
    xi = x.xi(a)
    assert x.xi(0.0) == 0.0
    assert np.all(np.abs(xi) < math.pi)
    d = np.diff(xi)
    assert np.all(d > 0) or np.all(d < 0)
    assert np.max(np.abs(x.xi_residual(a))) < 1e-10
    assert abs(abs(float(x.xi(math.pi))) - math.pi / 2) < 1e-9
    # inverse
    np.testing.assert_allclose(x.xi_inv(xi), a, atol=1e-9)


def test_xi_monotone_dense(three_xs):
    a = np.linspace(0, 2 * math.pi, 10_000, endpoint=False)
    for x in three_xs:
        xi = x.xi(a)
        d = np.diff(xi)
        assert np.all(d > 0) or np.all(d < 0)
        lo, hi = x.xi_range()
        assert np.all((xi >= lo) & (xi <= hi))
        assert abs(abs(float(x.xi(math.pi))) - math.pi / 2) < 1e-9
        assert np.max(np.abs(x.xi_residual(a))) < 1e-10


def test_branch_flip(three_xs):
    x = three_xs[0]
    y = x.with_branch(-x.branch)
    a = np.linspace(0.1, 6.0, 50)
    np.testing.assert_allclose(y.xi(a), -x.xi(a), atol=1e-12)
    assert abs(y.det) == pytest.approx(abs(x.det))


def test_limit_basis_at(pauli_x, three_xs):
    v0, v1 = pauli_x.limit_basis_at(0.0)
    np.testing.assert_array_equal(np.column_stack([v0, v1]), pauli_x.limit_basis)
    w0, w1 = pauli_x.limit_basis_at(math.pi)
    # quarter turn: (phi1, -phi0)
    np.testing.assert_allclose(w0, v1, atol=1e-12)
    np.testing.assert_allclose(w1, -v0, atol=1e-12)
    for x in [pauli_x] + three_xs:
        for a in np.linspace(0, 2 * math.pi, 17):
            b = np.column_stack(x.limit_basis_at(a))
            np.testing.assert_allclose(b.T @ b, np.eye(2), atol=1e-12)


@pytest.mark.parametrize("alpha", [0.0, 0.7, 2.0, 3.5, 5.5])
def test_limit_basis_matches_radial_eigenvectors(three, three_xs, alpha):
    for x in three_xs:
        b = np.column_stack(x.limit_basis_at(alpha))
        for r in (1e-2, 1e-3, 1e-4):
            es = eigensystem(three, x.point + r * np.array([math.cos(alpha), math.sin(alpha)]))
            ov = np.abs(np.einsum("ij,ij->j", b, es.vectors[:, [x.j, x.j + 1]]))
            assert np.all(ov > 1 - 10 * r)


def test_radial_limit_linear(three, three_xs):
    for x in three_xs:
        for alpha in (0.3, 1.9, 4.0):
            e = np.array([math.cos(alpha), math.sin(alpha)])
            vals = []
            for r in (1e-2, 5e-3, 2.5e-3):
                es = eigensystem(three, x.point + r * e)
                a, b = es.vectors[:, x.j], es.vectors[:, x.j + 1]
                vals.append(abs(a @ (e[0] * three.h1 + e[1] * three.h2) @ b))
            order = np.log2(vals[0] / vals[1]), np.log2(vals[1] / vals[2])
            assert vals[-1] < 1e-1 and min(order) > 0.8


def test_cone_bound(three, three_xs, pauli, pauli_x):
    for m, x in [(pauli, pauli_x)] + [(three, y) for y in three_xs]:
        th = np.linspace(0, 2 * math.pi, 64, endpoint=False)
        for r in np.geomspace(1e-4, 0.1, 6):
            pts = x.point + r * np.column_stack([np.cos(th), np.sin(th)])
            gaps = np.array([np.diff(eigensystem(m, p).values)[x.j] for p in pts])
            assert np.all(gaps >= 0.9 * x.cone_constant * r)


def test_cone_constant_three_level(three, three_xs):
    # ray-sampling oracle: min over 720 rays of gap / r at small r
    for x in three_xs:
        th = np.linspace(0, 2 * math.pi, 720, endpoint=False)
        r = 1e-5
        pts = x.point + r * np.column_stack([np.cos(th), np.sin(th)])
        oracle = min(np.diff(eigensystem(three, p).values)[x.j] for p in pts) / r
        assert x.cone_constant == pytest.approx(oracle, rel=1e-3)
        assert x.cone_constant == pytest.approx(cone_constant(three, x.point, x.j), rel=1e-12)


def test_locate_pauli(pauli):
    x = locate_intersection(pauli, 0, (0.5, 0.3))
    assert np.hypot(*x.point) < 1e-8


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_locate_random_two_level(seed):
    m, u = two_level(seed)
    rng = np.random.default_rng(seed)
    start = u + rng.uniform(-0.3, 0.3, 2)
    x = locate_intersection(m, 0, start, Disc(tuple(u), 10.0))
    assert np.hypot(*(x.point - u)) < 1e-7 * max(1.0, np.hypot(*u))


def test_locate_three_level(three, three_xs):
    x0, x1 = three_xs
    # gap scan oracle: the located points are genuine zeros of the gap
    for x in three_xs:
        assert np.diff(eigensystem(three, x.point).values)[x.j] < 1e-8 * 3
    assert np.hypot(*(x0.point - [4 / 3, 0])) < 1e-7
    assert np.hypot(*x1.point) < 1e-7


def test_locate_without_crossing(three):
    with pytest.raises((LeftRegion, MaxSteps)):
        locate_intersection(three, 0, (3.0, 3.0), Disc((3.0, 3.0), 0.5))


def test_intersection_json_round_trip(three_xs):
    for x in three_xs:
        d = x.to_json()
        assert set(d) >= {"point", "band", "det_M", "cone_constant", "limit_basis"}
        y = Intersection.from_json(d)
        np.testing.assert_array_equal(y.point, x.point)
        np.testing.assert_array_equal(y.limit_basis, x.limit_basis)
        a = np.linspace(0, 6, 7)
        np.testing.assert_array_equal(y.xi(a), x.xi(a))


def test_stability_probe(pauli, pauli_x):
    r0 = stability_probe(pauli, pauli_x, 0.0, 3)
    assert r0.success and r0.max_displacement == 0.0
    r = stability_probe(pauli, pauli_x, 1e-3, 20, seed=1)
    assert r.success and r.max_displacement <= 1e-2 and r.min_abs_det > 0.5
    bad = stability_probe(pauli, pauli_x, 1.0, 5, seed=2, region=Disc((0.0, 0.0), 0.05))
    assert not bad.success and bad.failures


def test_stability_probe_displacement_oracle(pauli, pauli_x):
    # relocated point compared with the exact zero of the perturbed traceless part
    rng = np.random.default_rng(0)
    from conic_climb.conical import random_symmetric
    d = [random_symmetric(rng, 2, 1e-3) for _ in range(3)]
    pert = pauli.perturbed(*d)
    tl = lambda h: np.array([0.5 * (h[0, 0] - h[1, 1]), h[0, 1]])
    exact = np.linalg.solve(np.column_stack([tl(pert.h1), tl(pert.h2)]), -tl(pert.h0))
    x = locate_intersection(pert, 0, (0.0, 0.0), Disc((0.0, 0.0), 0.5))
    np.testing.assert_allclose(x.point, exact, atol=1e-9)
    np.testing.assert_allclose(assemble(pert, x.point) - np.trace(assemble(pert, x.point)) / 2 * np.eye(2), 0,
                               atol=1e-9)


def test_conicity_matrix_type_validation():
    with pytest.raises(ValueError):
        ConicityMatrix(np.array([[np.nan, 0], [0, 1]]))
