from fractions import Fraction
import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fwlsynth.errors import DimensionMismatch
from fwlsynth.interval import Box, Interval, IntervalMatrix, box_step, contains, orbit, powers, vertices


def exact_contains(iv, q):
    return Fraction(iv.lo) <= q <= Fraction(iv.hi)


def test_identity_step():
    x = Box([-1.0, 0.25], [2.0, 0.5])
    out = box_step(IntervalMatrix.from_point(np.eye(2)), x, Box.point([0.0, 0.0]))
    assert out == x


def test_scaled_step_plus_noise():
    out = box_step(IntervalMatrix.from_point(0.5 * np.eye(2)), Box.symmetric(1.0, 2), Box.symmetric(0.1, 2))
    assert np.allclose(out.lo, -0.6) and np.allclose(out.hi, 0.6)
    # outward rounding may only widen
    assert np.all(out.lo <= -0.6) and np.all(out.hi >= 0.6)


def test_vertices_order():
    assert [tuple(v) for v in vertices(Box([-1.0], [1.0]))] == [(-1.0,), (1.0,)]
    v = [tuple(float(c) for c in p) for p in vertices(Box.symmetric(1.0, 3))]
    assert len(v) == 8
    assert v[0] == (-1.0, -1.0, -1.0) and v[-1] == (1.0, 1.0, 1.0)
    assert v[1] == (-1.0, -1.0, 1.0)


def test_contains():
    big, small = Box.symmetric(1.0, 2), Box.symmetric(0.5, 2)
    assert contains(big, small)
    assert not contains(small, big)
    with pytest.raises(DimensionMismatch):
        contains(big, Box.symmetric(0.5, 3))


def test_dimension_checks():
    with pytest.raises(DimensionMismatch):
        box_step(np.eye(2), Box.symmetric(1.0, 2), Box.symmetric(0.1, 3))
    with pytest.raises(ValueError):
        Interval(1.0, 0.0)


# -- expression fuzz ---------------------------------------------------------


def _random_expr(rng, depth):
    """Random tree over +, -, *; leaves are intervals with a sampled point."""
    if depth == 0 or rng.random() < 0.25:
        a, b = sorted(rng.uniform(-3, 3, 2))
        iv = Interval(a, b)
        p = Fraction(rng.uniform(a, b))
        p = min(max(p, Fraction(a)), Fraction(b))
        return iv, p
    (l, lp), (r, rp) = _random_expr(rng, depth - 1), _random_expr(rng, depth - 1)
    op = rng.integers(3)
    if op == 0:
        return l + r, lp + rp
    if op == 1:
        return l - r, lp - rp
    return l * r, lp * rp


def test_expression_soundness_fuzz(rng):
    for _ in range(100_000):
        iv, q = _random_expr(rng, 2)
        assert exact_contains(iv, q)


def test_tiny_operands_rounded_outward():
    # 0.1 + 0.2 is inexact in binary64; the enclosure must contain the real sum
    iv = Interval.point(0.1) + Interval.point(0.2)
    assert exact_contains(iv, Fraction(0.1) + Fraction(0.2))
    assert iv.lo < iv.hi
    iv = Interval.point(0.1) * Interval.point(3.0)
    assert exact_contains(iv, Fraction(0.1) * 3)
    # exact operations stay points
    assert (Interval.point(0.5) + Interval.point(0.25)).width == 0


# -- box_step containment ----------------------------------------------------


def test_box_step_monte_carlo(rng):
    n = 3
    mid = rng.uniform(-1, 1, (n, n))
    A = IntervalMatrix.from_point(mid, radius=1e-3)
    x = Box(*np.sort(rng.uniform(-1, 1, (2, n)), axis=0))
    w = Box.symmetric(0.05, n)
    out = box_step(A, x, w)
    for _ in range(10_000):
        Ac = rng.uniform(A.lo, A.hi)
        xc = rng.uniform(x.lo, x.hi)
        wc = rng.uniform(w.lo, w.hi)
        for i in range(n):
            exact = sum(Fraction(Ac[i, j]) * Fraction(xc[j]) for j in range(n)) + Fraction(wc[i])
            assert Fraction(out.lo[i]) <= exact <= Fraction(out.hi[i])


def _boxes(n):
    pt = st.floats(-2, 2, allow_nan=False)
    return st.tuples(st.lists(pt, min_size=n, max_size=n), st.lists(st.floats(0, 1), min_size=n, max_size=n))


@given(_boxes(2), st.lists(st.floats(0, 1), min_size=2, max_size=2),
       st.lists(st.floats(-1.5, 1.5, allow_nan=False), min_size=4, max_size=4))
def test_box_step_monotone(base, grow, entries):
    c, r = np.array(base[0]), np.array(base[1])
    inner = Box(c - r, c + r)
    outer = Box(c - r - np.array(grow), c + r + np.array(grow))
    A = IntervalMatrix.from_point(np.array(entries).reshape(2, 2), radius=1e-6)
    w = Box.symmetric(0.01, 2)
    assert contains(box_step(A, outer, w), box_step(A, inner, w))


def test_interval_matrix_product_contains_samples(rng):
    A = IntervalMatrix.from_point(rng.uniform(-1, 1, (3, 3)), radius=0.01)
    B = IntervalMatrix.from_point(rng.uniform(-1, 1, (3, 3)), radius=0.01)
    C = A @ B
    for _ in range(2000):
        P = rng.uniform(A.lo, A.hi) @ rng.uniform(B.lo, B.hi)
        assert np.all(C.lo <= P + 1e-15) and np.all(P - 1e-15 <= C.hi)


def test_weighted_norm_bounds_members(rng):
    A = IntervalMatrix.from_point(rng.uniform(-1, 1, (3, 3)), radius=0.02)
    d = np.array([1.0, 2.0, 0.5])
    nrm = A.weighted_norm(d)
    for _ in range(500):
        M = rng.uniform(A.lo, A.hi)
        # ||D^-1 M D||_inf
        assert np.max(np.abs(M * d[None, :] / d[:, None]).sum(axis=1)) <= nrm + 1e-15


# -- powers ------------------------------------------------------------------


def test_powers_enclose_exact_products(rng):
    for n in (1, 2, 3):
        M = rng.uniform(-1, 1, (n, n)) / n
        exact = [[Fraction(float(v)) for v in row] for row in M]
        P = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
        for k, enc in enumerate(itertools.islice(powers(M), 40)):
            for i in range(n):
                for j in range(n):
                    assert Fraction(float(enc.lo[i, j])) <= P[i][j] <= Fraction(float(enc.hi[i, j]))
            P = [[sum(exact[i][t] * P[t][j] for t in range(n)) for j in range(n)] for i in range(n)]


def test_powers_radius_stays_small():
    # a rotation: iterated interval products would blow up, squaring does not
    c, s = np.cos(0.3), np.sin(0.3)
    enc = list(itertools.islice(powers(0.95 * np.array([[c, -s], [s, c]])), 257))[256]
    assert np.max(enc.hi - enc.lo) < 1e-12


# -- orbit -------------------------------------------------------------------


def test_orbit_scalar_closed_form():
    boxes = list(itertools.islice(orbit(np.array([[0.5]]), Box([-1.0], [1.0]), Box([-0.1], [0.1])), 8))
    for k, b in enumerate(boxes):
        r = 0.5**k + 0.1 * sum(0.5**i for i in range(k))
        assert b.hi[0] == pytest.approx(r, rel=1e-14) and b.lo[0] == pytest.approx(-r, rel=1e-14)
        assert b.hi[0] >= r * (1 - 1e-15)


def test_orbit_contains_sampled_runs(rng):
    n = 3
    M = rng.uniform(-1, 1, (n, n))
    M *= 0.9 / np.max(np.abs(np.linalg.eigvals(M)))
    A = IntervalMatrix.from_point(M, radius=1e-4)
    x0 = Box.symmetric(0.5, n)
    w = Box.symmetric(0.01, n)
    boxes = list(itertools.islice(orbit(A, x0, w), 30))
    for _ in range(300):
        Ac = rng.uniform(A.lo, A.hi)  # one constant matrix per run
        x = rng.uniform(x0.lo, x0.hi)
        for k, b in enumerate(boxes):
            assert b.contains_point(x, tol=1e-12), k
            x = Ac @ x + rng.uniform(w.lo, w.hi)
