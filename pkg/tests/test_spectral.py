import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conic_climb.model import OperatorTriple, assemble, build_galerkin
from conic_climb.spectral import (Band, DegenerateAlongCurve, Disc, GapNotCertified, Rect, TrackingLost,
                                  certify_band, eigensystem, fix_signs, projector, track_along)

from conftest import rand_sym


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_eigensystem_invariants(seed, a, b):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    m = OperatorTriple(rand_sym(rng, n), rand_sym(rng, n), rand_sym(rng, n))
    es = eigensystem(m, (a, b))
    h = assemble(m, (a, b))
    hn = np.linalg.norm(h, 2)
    assert np.all(np.diff(es.values) >= 0)
    for i in range(n):
        res = np.linalg.norm(h @ es.vectors[:, i] - es.values[i] * es.vectors[:, i])
        assert res <= 1e-10 * (1 + abs(es.values[i])) * max(hn, 1.0)
    np.testing.assert_allclose(es.vectors.T @ es.vectors, np.eye(n), atol=1e-10)
    # sign convention: largest-magnitude component positive
    v = es.vectors
    assert np.all(v[np.argmax(np.abs(v), axis=0), np.arange(n)] > 0)


def test_pauli_values(pauli):
    np.testing.assert_allclose(eigensystem(pauli, (0.3, 0.4)).values, [-0.5, 0.5], atol=1e-15)
    es = eigensystem(pauli, (0.0, 0.0))
    np.testing.assert_allclose(es.values, [0.0, 0.0])
    np.testing.assert_allclose(es.vectors.T @ es.vectors, np.eye(2), atol=1e-15)


def test_free_galerkin_values():
    np.testing.assert_allclose(eigensystem(build_galerkin(5), (0.3, -0.2)).values, [1, 4, 9, 16, 25], atol=1e-12)


def test_fix_signs_tie_goes_to_first_index():
    v = np.array([[-1.0, 1.0], [1.0, 1.0]]) / math.sqrt(2)
    out = fix_signs(v)
    np.testing.assert_allclose(out[:, 0], [1 / math.sqrt(2), -1 / math.sqrt(2)])


def test_certify_whole_spectrum_unbounded(pauli):
    b = certify_band(pauli, [0, 1], Disc((0, 0), 1.0), 10)
    assert b.unbounded and math.isinf(b.gamma)
    assert b.to_json()["gamma"] is None
    assert Band.from_json(b.to_json()).unbounded


def test_certify_three_level(three, three_xs):
    x0, x1 = three_xs
    # grid-scan oracle: the (1, 2) crossing lies far from x0, the (0, 1) crossing far from x1
    b = certify_band(three, [0, 1], Disc(tuple(x0.point), 0.2), 40)
    assert b.gamma > 0
    back = Band.from_json(b.to_json())
    assert back.indices == [0, 1] and back.gamma == b.gamma
    with pytest.raises(GapNotCertified) as err:
        certify_band(three, [0, 1], Disc(tuple(x1.point), 0.2), 40)
    assert err.value.margin is not None and err.value.worst_point is not None


def test_certify_rejects_coarse_grid(three):
    with pytest.raises(ValueError):
        certify_band(three, [0, 1], Rect((0, 0), (1, 1)), 1)


def test_certify_margin_is_sound(three):
    # the certified gamma is a lower bound for the margin on a much finer grid
    region = Rect((1.0, -0.3), (1.6, 0.3))
    b = certify_band(three, [0, 1], region, 20)
    xs = np.linspace(1.0, 1.6, 121)
    ys = np.linspace(-0.3, 0.3, 121)
    w = np.array([[eigensystem(three, (x, y)).values for y in ys] for x in xs])
    assert np.min(w[..., 2] - w[..., 1]) >= b.gamma


def test_projector_examples(pauli, three):
    es = eigensystem(three, (0.3, 0.7))
    np.testing.assert_allclose(projector(es, [0, 1, 2]), np.eye(3), atol=1e-12)
    np.testing.assert_allclose(projector(eigensystem(pauli, (1.0, 0.0)), [0]), np.diag([0.0, 1.0]), atol=1e-15)
    p = projector(es, Band(0, 1, 1.0))
    np.testing.assert_allclose(p @ p - p, 0.0, atol=1e-10)
    np.testing.assert_allclose(p, p.T, atol=1e-15)
    assert abs(np.trace(p) - 2) < 1e-10


def test_projector_lipschitz_constant_stable(three, three_xs):
    x0 = three_xs[0]
    centre = x0.point + np.array([0.0, 0.6])

    def estimate(h):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(200):
            u = centre + rng.uniform(-0.2, 0.2, 2)
            d = rng.standard_normal(2)
            d *= h / np.linalg.norm(d)
            pa = projector(eigensystem(three, u), [0])
            pb = projector(eigensystem(three, u + d), [0])
            worst = max(worst, np.linalg.norm(pa - pb, 2) / h)
        return worst

    c1, c2 = estimate(1e-3), estimate(5e-4)
    assert np.isfinite(c1) and abs(c1 - c2) / c1 < 0.05


def test_eigenvalue_lipschitz_bound():
    rng = np.random.default_rng(11)
    checks = 0
    for _ in range(10):
        n = int(rng.integers(2, 6))
        m = OperatorTriple(rand_sym(rng, n), rand_sym(rng, n), rand_sym(rng, n))
        lip = m.lipschitz()
        # random C1 curve: a few Fourier modes
        c = rng.standard_normal((2, 4))
        t = np.sort(rng.uniform(0, 1, 101))
        u = np.stack([c[i, 0] + c[i, 1] * np.sin(3 * t) + c[i, 2] * np.cos(2 * t) + c[i, 3] * t for i in range(2)], 1)
        w = np.array([eigensystem(m, p).values for p in u])
        dl = np.abs(np.diff(w, axis=0))
        du = np.linalg.norm(np.diff(u, axis=0), axis=1)
        assert np.all(dl <= lip * du[:, None] + 1e-9)
        checks += len(du)
    assert checks >= 1000


def test_off_diagonal_identity_first_order(three):
    # (lambda_m - lambda_l) <phi_l, dphi_m/dt> = <phi_l, (u1' H1 + u2' H2) phi_m> along a curve
    curve = lambda t: np.array([0.5 + 0.4 * np.cos(t), 0.8 + 0.3 * np.sin(2 * t)])
    dcurve = lambda t: np.array([-0.4 * np.sin(t), 0.6 * np.cos(2 * t)])
    t0, l, mm = 0.7, 0, 1

    def residual(h):
        f = track_along(three, [curve(t0), curve(t0 + h)], [0, 1, 2])
        v0, v1 = f[0].vectors, f[1].vectors
        w = f[0].eig.values
        dphi = (v1[:, mm] - v0[:, mm]) / h
        du = dcurve(t0)
        hdot = du[0] * three.h1 + du[1] * three.h2
        return abs((w[mm] - w[l]) * v0[:, l] @ dphi - v0[:, l] @ hdot @ v0[:, mm])

    hs = [1e-2, 5e-3, 2.5e-3, 1.25e-3]
    r = [residual(h) for h in hs]
    orders = np.log2(np.array(r[:-1]) / np.array(r[1:]))
    assert np.all(orders >= 0.9)


def test_track_quarter_circle(pauli):
    s = np.linspace(0, math.pi / 2, 100)
    frames = track_along(pauli, np.column_stack([np.cos(s), np.sin(s)]), [0, 1], parameters=s)
    for a, b in zip(frames[:-1], frames[1:]):
        assert np.all(np.einsum("ij,ij->j", a.vectors, b.vectors) > 0.99)


def test_track_through_degeneracy(pauli):
    s = np.linspace(-1, 1, 11)
    with pytest.raises(DegenerateAlongCurve) as err:
        track_along(pauli, np.column_stack([s, 0 * s]), [0], parameters=s)
    assert err.value.index == 0 and abs(err.value.parameter) < 1e-12


def test_track_constant_curve(three):
    frames = track_along(three, np.tile([0.4, 0.9], (5, 1)), [0, 1, 2])
    for f in frames[1:]:
        np.testing.assert_array_equal(f.vectors, frames[0].vectors)


def test_track_refuses_large_steps(pauli):
    # a half turn of the control rotates the eigenvectors by a quarter turn
    s = np.array([0.0, math.pi])
    with pytest.raises(TrackingLost) as err:
        track_along(pauli, np.column_stack([np.cos(s), np.sin(s)]), [0], parameters=s)
    assert err.value.overlap <= 0.9
