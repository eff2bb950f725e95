"""Binary field arithmetic GF(2^t) for the polynomial-evaluation MAC.

Elements are integers in [0, 2^t); addition is XOR. Multiplication is
carry-less followed by reduction modulo a fixed low-weight irreducible
polynomial, so tags are bit-exact across implementations:

    t=8  : x^8  + x^4 + x^3 + x   + 1   (0x11B)
    t=16 : x^16 + x^5 + x^3 + x   + 1   (0x1002B)
    t=32 : x^32 + x^7 + x^3 + x^2 + 1   (0x10000008D)
    t=64 : x^64 + x^4 + x^3 + x   + 1   (0x1000000000000001B)

Scalar operations accept Python ints for any supported t. Vectorized
operations (numpy uint64) are available for t <= 32, where the unreduced
product still fits in 64 bits; they are used by the Monte-Carlo forgery
harness.
"""

from __future__ import annotations

import numpy as np

REDUCTION_POLY = {
    8: 0x11B,
    16: 0x1002B,
    32: 0x1_0000_008D,
    64: 0x1_0000_0000_0000_001B,
}

SUPPORTED_TAG_BITS = tuple(sorted(REDUCTION_POLY))


class GF2Field:
    """Arithmetic in GF(2^t) with the fixed reduction polynomial for t."""

    def __init__(self, t: int):
        if t not in REDUCTION_POLY:
            raise ValueError(f"unsupported field size t={t}; choose from {SUPPORTED_TAG_BITS}")
        self.t = t
        self.poly = REDUCTION_POLY[t]
        self.order = 1 << t

    def mul(self, x: int, y: int) -> int:
        """Scalar product of two field elements."""
        x &= self.order - 1
        y &= self.order - 1
        r = 0
        while y:
            if y & 1:
                r ^= x
            x <<= 1
            y >>= 1
        return self._reduce(r)

    def _reduce(self, v: int) -> int:
        t = self.t
        for bit in range(v.bit_length() - 1, t - 1, -1):
            if (v >> bit) & 1:
                v ^= self.poly << (bit - t)
        return v

    def pow(self, x: int, k: int) -> int:
        """x**k via square-and-multiply."""
        r = 1
        x &= self.order - 1
        while k:
            if k & 1:
                r = self.mul(r, x)
            x = self.mul(x, x)
            k >>= 1
        return r

    def mul_vec(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Elementwise product of uint64 arrays; requires t <= 32."""
        if self.t > 32:
            raise ValueError("vectorized multiply supports t <= 32 only")
        xs = np.asarray(xs, dtype=np.uint64)
        ys = np.asarray(ys, dtype=np.uint64)
        acc = np.zeros(np.broadcast(xs, ys).shape, dtype=np.uint64)
        one = np.uint64(1)
        for b in range(self.t):
            bit = (ys >> np.uint64(b)) & one
            acc ^= (xs << np.uint64(b)) * bit
        # reduce bits [t, 2t-1] from the top down
        poly = np.uint64(self.poly)
        for bit in range(2 * self.t - 2, self.t - 1, -1):
            hi = (acc >> np.uint64(bit)) & one
            acc ^= (poly << np.uint64(bit - self.t)) * hi
        return acc

    def pow_vec(self, xs: np.ndarray, k: int) -> np.ndarray:
        """Elementwise xs**k; requires t <= 32."""
        r = np.ones_like(np.asarray(xs, dtype=np.uint64))
        base = np.asarray(xs, dtype=np.uint64)
        while k:
            if k & 1:
                r = self.mul_vec(r, base)
            base = self.mul_vec(base, base)
            k >>= 1
        return r


_FIELDS: dict[int, GF2Field] = {}


def field(t: int) -> GF2Field:
    """Shared GF2Field instance for tag width t."""
    if t not in _FIELDS:
        _FIELDS[t] = GF2Field(t)
    return _FIELDS[t]
