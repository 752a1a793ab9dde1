from fractions import Fraction

import numba
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fwlsynth.errors import DivisorTooSmall, Overflow
from fwlsynth.fixedpoint import (
    FixedFormat,
    FixedValue,
    add_raw,
    dot_fixed,
    dot_raw_array,
    fp_add,
    fp_div_error_bound,
    fp_mul,
    mul_raw,
    mul_raw_array,
    quantize,
    quantize_array,
)

F88 = FixedFormat(8, 8)
F44 = FixedFormat(4, 4)

# the implementation's scalar kernels, compiled for the exhaustive sweeps
mul_raw_jit = numba.njit(mul_raw)
add_raw_jit = numba.njit(add_raw)


def fv(x, fmt=F88):
    return quantize(x, fmt)[0]


def all_raw(fmt):
    return np.arange(-fmt.max_raw, fmt.max_raw + 1, dtype=np.int64)


# -- format ------------------------------------------------------------------


def test_format_range():
    assert F44.max_value == Fraction(9) - Fraction(1, 16)
    assert F44.max_raw == 143
    assert len(all_raw(F44)) == 287
    assert F88.cm == Fraction(1, 256)
    assert str(F88) == "<8,8>"
    assert FixedFormat.from_dict(F88.to_dict()) == F88
    with pytest.raises(ValueError):
        FixedFormat(0, 4)


def test_value_outside_range_rejected():
    with pytest.raises(Overflow):
        FixedValue(F44.max_raw + 1, F44)


# -- quantize ----------------------------------------------------------------


def test_quantize_exact_value():
    v, d = quantize(0.5, F88)
    assert v.value == Fraction(1, 2) and d == 0


def test_quantize_tenth():
    v, d = quantize(0.1, F88)
    assert v.value == Fraction(25, 256) == Fraction(0.09765625)
    # the error is exact with respect to the binary64 input
    assert d == Fraction(0.1) - Fraction(25, 256)
    assert float(d) == pytest.approx(0.00234375, abs=1e-17)


def test_quantize_range_boundary():
    with pytest.raises(Overflow):
        quantize(2 ** (F88.int_bits - 1) + 1, F88)
    assert quantize(float(F88.max_value), F88)[0].raw == F88.max_raw
    with pytest.raises(Overflow):
        quantize(float("nan"), F88)


def test_truncation_grid_exhaustive():
    # every x = j * 2^-6 in range: value moves toward zero by less than c_m
    lim = int(F44.max_value * 64)
    for j in range(-lim, lim + 1):
        x = Fraction(j, 64)
        v, d = quantize(x, F44)
        assert v.value + d == x
        assert abs(d) < F44.cm
        if x >= 0:
            assert v.value <= x
        else:
            assert v.value >= x


@given(st.floats(min_value=-128.9, max_value=128.9, allow_nan=False))
def test_quantize_array_matches_scalar(x):
    assert int(quantize_array([x], F88)[0]) == quantize(x, F88)[0].raw


# -- add / mul ---------------------------------------------------------------


def test_mul_examples():
    assert fp_mul(fv(0.5), fv(0.5)).value == Fraction(1, 4)
    tiny = fv(1 / 256)
    assert fp_mul(tiny, tiny).raw == 0
    assert fp_mul(fv(-0.5), fv(0.5)).value == Fraction(-1, 4)


@numba.njit(cache=True)
def _mul_sweep(lo, hi, frac_bits, max_raw):
    """Count products whose truncation misses the exact value by >= c_m or
    moves away from zero.  Returns (violations, checked)."""
    one = 1 << frac_bits
    bad = 0
    n = 0
    for a in range(lo, hi + 1):
        for b in range(lo, hi + 1):
            exact = a * b  # at scale 2^(2F)
            r = mul_raw_jit(a, b, frac_bits)
            if r > max_raw or r < -max_raw:
                continue
            n += 1
            err = exact - r * one
            if err >= one or err <= -one:
                bad += 1
            elif exact >= 0 and err < 0:
                bad += 1
            elif exact < 0 and err > 0:
                bad += 1
    return bad, n


@pytest.mark.parametrize("fmt", [F44, FixedFormat(3, 5)])
def test_mul_truncation_exhaustive(fmt):
    bad, n = _mul_sweep(-fmt.max_raw, fmt.max_raw, fmt.frac_bits, fmt.max_raw)
    assert n > 10000
    assert bad == 0


def test_mul_array_agrees_with_scalar_exhaustive():
    r = all_raw(F44)
    got = mul_raw_array(r[:, None], r[None, :], F44.frac_bits)
    want = np.array([[int(Fraction(int(a) * int(b), 16 * 16) * 16) for b in r] for a in r])
    assert np.array_equal(got, want)


def test_mul_array_wide_words_fall_back_to_exact():
    a = np.array([2**40, -(2**40) - 3])
    b = np.array([2**30 + 1, 2**30 + 7])
    got = mul_raw_array(a, b, 20)
    want = [int(Fraction(int(x) * int(y), 2**20)) for x, y in zip(a, b)]
    assert [int(v) for v in got] == want


def test_mul_propagated_bound_exhaustive_grid():
    # reals on a 2^-5 grid in (-3, 3): |Q(a)Q(b) product - ab| <= |d1 b| + |d2 a| + c_m
    grid = [Fraction(j, 32) for j in range(-95, 96)]
    q = {x: quantize(x, F44) for x in grid}
    for a in grid:
        va, da = q[a]
        for b in grid:
            vb, db = q[b]
            r = fp_mul(va, vb).value
            assert abs(r - a * b) <= abs(da * b) + abs(db * a) + F44.cm


def test_add_exact_when_in_range():
    r = all_raw(F44)
    for a in r[::7]:
        for b in r[::5]:
            s = int(a) + int(b)
            if abs(s) <= F44.max_raw:
                out = fp_add(FixedValue(int(a), F44), FixedValue(int(b), F44))
                assert out.value == Fraction(int(a), 16) + Fraction(int(b), 16)
            else:
                with pytest.raises(Overflow):
                    fp_add(FixedValue(int(a), F44), FixedValue(int(b), F44))


def test_add_raw_compiled_matches_python():
    for a, b in [(3, 4), (-143, 0), (100, 43), (-100, -43)]:
        assert add_raw_jit(a, b, 143) == add_raw(a, b, 143) == a + b
    with pytest.raises(OverflowError):
        add_raw(100, 44, 143)


@given(st.integers(-(2**15), 2**15), st.integers(-(2**15), 2**15))
def test_mul_raw_matches_rational_truncation(a, b):
    assert mul_raw(a, b, 8) == int(Fraction(a * b, 256))


def test_format_mismatch():
    with pytest.raises(ValueError):
        fp_add(fv(0.5), fv(0.5, F44))


# -- division bound ----------------------------------------------------------


def test_div_bound_examples():
    assert fp_div_error_bound(1, 2, 0, 0) == 0
    d = Fraction(1, 256)
    want = abs(d / (d * d - d * 2))
    assert fp_div_error_bound(1, 2, 0, d) == want
    assert fp_div_error_bound(0.75, 0.75, d, d) == 0
    with pytest.raises(DivisorTooSmall):
        fp_div_error_bound(1, 0.001, 0, 0.01)
    with pytest.raises(DivisorTooSmall):
        fp_div_error_bound(1, 0, 0, 0)


def test_div_bound_covers_grid_division():
    # divide truncated operands exactly and compare with the real quotient
    grid = [Fraction(j, 64) for j in range(-192, 193, 3)]
    q = {x: quantize(x, F44) for x in grid}
    checked = 0
    for c2 in grid:
        v2, d2 = q[c2]
        if v2.raw == 0:
            continue
        for c1 in grid:
            v1, d1 = q[c1]
            err = abs(c1 / c2 - v1.value / v2.value)
            assert err <= fp_div_error_bound(c1, c2, d1, d2)
            checked += 1
    assert checked > 10000


# -- dot product -------------------------------------------------------------


def test_dot_examples():
    u, b = dot_fixed([fv(0), fv(0), fv(0)], [fv(0.3), fv(-2), fv(7)])
    assert u.raw == 0 and b == 3 * F88.cm
    u, b = dot_fixed([fv(1)], [fv(0.5)])
    assert u.value == Fraction(1, 2) and b == F88.cm


@numba.njit(cache=True)
def _dot2_sweep(lo, hi, step, frac_bits, max_raw):
    """Exhaustive n = 2 dot products; returns (violations, checked, worst)."""
    one = 1 << frac_bits
    bound = 2 * one  # n * c_m at scale 2^(2F)
    bad = 0
    n = 0
    worst = 0
    for k1 in range(lo, hi + 1, step):
        for k2 in range(lo, hi + 1, step):
            for x1 in range(lo, hi + 1):
                p1 = mul_raw_jit(k1, x1, frac_bits)
                if p1 > max_raw or p1 < -max_raw:
                    continue
                for x2 in range(lo, hi + 1):
                    p2 = mul_raw_jit(k2, x2, frac_bits)
                    if p2 > max_raw or p2 < -max_raw:
                        continue
                    s = p1 + p2
                    if s > max_raw or s < -max_raw:
                        continue
                    s = add_raw_jit(p1, p2, max_raw)
                    n += 1
                    err = abs(s * one - (k1 * x1 + k2 * x2))
                    if err > worst:
                        worst = err
                    if err > bound:
                        bad += 1
    return bad, n, worst


def dot2_exhaustive(fmt=F44, step=1):
    return _dot2_sweep(-fmt.max_raw, fmt.max_raw, step, fmt.frac_bits, fmt.max_raw)


def test_dot_bound_strided_sweep():
    bad, n, worst = dot2_exhaustive(step=13)
    assert n > 1_000_000
    assert bad == 0
    assert worst < 2 * 16


def test_dot_raw_array_matches_scalar(rng):
    k = rng.integers(-F44.max_raw, F44.max_raw + 1, size=(200, 2))
    x = rng.integers(-40, 41, size=(200, 2))
    for kk, xx in zip(k, x):
        try:
            u, _ = dot_fixed([FixedValue(int(v), F44) for v in kk], [FixedValue(int(v), F44) for v in xx])
        except Overflow:
            continue
        assert int(dot_raw_array(kk, xx[:, None], F44.frac_bits)[0]) == u.raw


def test_dot_bound_random_wide_format(rng):
    fmt = F88
    for n in (1, 2, 3, 4):
        K = rng.integers(-2000, 2001, size=(250_000, n))
        X = rng.integers(-2000, 2001, size=(250_000, n))
        u = mul_raw_array(K, X, fmt.frac_bits).sum(axis=1)
        exact = (K * X).sum(axis=1)
        err = np.abs(u * fmt.scale - exact)
        assert np.all(err < n * fmt.scale)


@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=4), st.data())
def test_dot_bound_property(k_raw, data):
    x_raw = data.draw(st.lists(st.integers(-1000, 1000), min_size=len(k_raw), max_size=len(k_raw)))
    K = [FixedValue(v, F88) for v in k_raw]
    X = [FixedValue(v, F88) for v in x_raw]
    u, bound = dot_fixed(K, X)
    exact = sum(a.value * b.value for a, b in zip(K, X))
    assert abs(u.value - exact) <= bound
