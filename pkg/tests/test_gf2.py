"""Field arithmetic checks, including an independent irreducibility proof."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpay.gf2 import GF2Field, REDUCTION_POLY, SUPPORTED_TAG_BITS, field


# -- independent polynomial arithmetic over GF(2)[x], used only as an oracle --

def _poly_mulmod(a: int, b: int, mod: int) -> int:
    # russian-peasant with reduction after every shift keeps deg(a) < deg(mod),
    # so the accumulator never needs a final reduction
    deg = mod.bit_length() - 1
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if (a >> deg) & 1:
            a ^= mod
    return r


def _poly_powmod_x(exp: int, mod: int) -> int:
    """x**exp mod mod, exponent a power of two via repeated squaring."""
    r = 0b10  # x
    for _ in range(exp.bit_length() - 1):
        r = _poly_mulmod(r, r, mod)
    return r


def _poly_gcd(a: int, b: int) -> int:
    while b:
        if a.bit_length() < b.bit_length():
            a, b = b, a
        if b == 0:
            break
        while a.bit_length() >= b.bit_length() and a:
            a ^= b << (a.bit_length() - b.bit_length())
        a, b = b, a
    return a


def _prime_factors(n: int) -> set[int]:
    out, d = set(), 2
    while d * d <= n:
        while n % d == 0:
            out.add(d)
            n //= d
        d += 1
    if n > 1:
        out.add(n)
    return out


@pytest.mark.parametrize("t", SUPPORTED_TAG_BITS)
def test_reduction_polys_are_irreducible(t):
    # degree-t poly p irreducible over GF(2) iff x^(2^t) == x (mod p) and
    # gcd(x^(2^(t/q)) - x, p) == 1 for every prime q | t
    mod = REDUCTION_POLY[t]
    assert mod.bit_length() - 1 == t
    assert _poly_powmod_x(1 << t, mod) == 0b10
    for q in _prime_factors(t):
        probe = _poly_powmod_x(1 << (t // q), mod) ^ 0b10
        assert _poly_gcd(probe, mod) == 1


@pytest.mark.parametrize("t", SUPPORTED_TAG_BITS)
def test_scalar_mul_matches_oracle(t):
    f = GF2Field(t)
    rng = np.random.default_rng(t)
    mask = (1 << t) - 1
    for _ in range(200):
        x = int.from_bytes(rng.bytes(t // 8), "big") & mask
        y = int.from_bytes(rng.bytes(t // 8), "big") & mask
        assert f.mul(x, y) == _poly_mulmod(x, y, f.poly)


def test_mul_vec_matches_scalar():
    for t in (8, 16, 32):
        f = field(t)
        rng = np.random.default_rng(t + 1)
        xs = rng.integers(0, 1 << t, size=500, dtype=np.uint64)
        ys = rng.integers(0, 1 << t, size=500, dtype=np.uint64)
        vec = f.mul_vec(xs, ys)
        for i in range(0, 500, 17):
            assert int(vec[i]) == f.mul(int(xs[i]), int(ys[i]))


def test_mul_vec_rejects_wide_fields():
    with pytest.raises(ValueError):
        field(64).mul_vec(np.array([1], dtype=np.uint64), np.array([1], dtype=np.uint64))


def test_unsupported_width_rejected():
    with pytest.raises(ValueError):
        GF2Field(12)


@settings(max_examples=200, deadline=None)
@given(
    st.sampled_from((8, 16)),
    st.integers(min_value=0, max_value=0xFFFF),
    st.integers(min_value=0, max_value=0xFFFF),
    st.integers(min_value=0, max_value=0xFFFF),
)
def test_field_axioms(t, a, b, c):
    f = field(t)
    mask = (1 << t) - 1
    a, b, c = a & mask, b & mask, c & mask
    assert f.mul(a, b) == f.mul(b, a)
    assert f.mul(a, f.mul(b, c)) == f.mul(f.mul(a, b), c)
    assert f.mul(a, b ^ c) == f.mul(a, b) ^ f.mul(a, c)
    assert f.mul(a, 1) == a
    if a:
        # Lagrange: a^(2^t - 1) == 1 for nonzero a
        assert f.pow(a, (1 << t) - 1) == 1


def test_pow_vec_matches_pow():
    f = field(16)
    xs = np.array([3, 9, 0x1234, 0xFFFF], dtype=np.uint64)
    got = f.pow_vec(xs, 13)
    for x, g in zip(xs, got):
        assert int(g) == f.pow(int(x), 13)
