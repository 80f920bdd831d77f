"""Exact arithmetic over a small prime field with signed fixed-point semantics.

Field elements are int64 values in [0, p). Elements at or above ceil(p/2)
encode negative numbers. The default modulus sits just below 2**24 so that
any product of two field elements summed over every fan-in that appears in
the supported models stays far inside the 64-bit accumulator range.
"""

from __future__ import annotations

import numpy as np

# Largest prime below 2**24. A 24-bit field keeps (p-1)**2 * fan_in below
# 2**63 for every layer shape this package models.
DEFAULT_MODULUS = 16_777_213

# Quantization steps per unit value.
DEFAULT_SCALE = 256

_MAX_MODULUS_BITS = 24
_FLOAT64_EXACT = 2**53


class FieldError(ValueError):
    """Raised for invalid field parameters or out-of-field data."""


def validate_modulus(modulus: int) -> None:
    """Check that ``modulus`` is an odd prime within the supported width."""
    if not isinstance(modulus, (int, np.integer)):
        raise FieldError(f"modulus must be an integer, got {type(modulus).__name__}")
    modulus = int(modulus)
    if modulus < 3 or modulus % 2 == 0:
        raise FieldError(f"modulus must be an odd prime >= 3, got {modulus}")
    if modulus.bit_length() > _MAX_MODULUS_BITS:
        raise FieldError(
            f"modulus {modulus} exceeds {_MAX_MODULUS_BITS} bits; larger fields "
            "would overflow the 64-bit accumulators used by the kernels"
        )
    if not _is_prime(modulus):
        raise FieldError(f"modulus {modulus} is not prime")


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    d = 3
    while d * d <= n:
        if n % d == 0:
            return False
        d += 2
    return True


def negative_threshold(modulus: int) -> int:
    """Smallest field element interpreted as a negative value."""
    return (modulus + 1) // 2


def signed_view(data: np.ndarray, modulus: int) -> np.ndarray:
    """Map field elements in [0, p) to signed integers in [-(p-1)//2, (p-1)//2]."""
    data = np.asarray(data, dtype=np.int64)
    return np.where(data >= negative_threshold(modulus), data - modulus, data)


def to_field(signed: np.ndarray, modulus: int) -> np.ndarray:
    """Map signed integers back into [0, p)."""
    return np.mod(np.asarray(signed, dtype=np.int64), modulus)


def field_capacity_fan_in(modulus: int, scale: int) -> int:
    """Largest fan-in for which unit-bounded values cannot wrap.

    Honest activations and weights with magnitude <= 1 quantize to at most
    ``scale``; a dot product over ``fan_in`` terms then stays below
    ``fan_in * scale**2``, which must fit in the signed half of the field.
    """
    return (modulus - 1) // (2 * scale * scale)


def round_half_even_div(numer: np.ndarray, denom: int) -> np.ndarray:
    """Divide signed int64 values by a positive integer, rounding half to even."""
    if denom <= 0:
        raise FieldError(f"divisor must be positive, got {denom}")
    numer = np.asarray(numer, dtype=np.int64)
    quot = numer // denom
    rem = numer - quot * denom  # always in [0, denom)
    twice = 2 * rem
    bump = (twice > denom) | ((twice == denom) & ((quot & 1) == 1))
    return quot + bump


def rescale_field(data: np.ndarray, modulus: int, divisor: int) -> np.ndarray:
    """Divide field values by ``divisor`` in signed space, half-to-even."""
    signed = signed_view(data, modulus)
    return to_field(round_half_even_div(signed, divisor), modulus)


def field_matmul(a: np.ndarray, b: np.ndarray, modulus: int) -> np.ndarray:
    """Exact (a @ b) mod p for int64 field matrices.

    Uses float64 BLAS where the arithmetic is provably exact: a single GEMM
    when ``k * p**2 < 2**53``, otherwise a 12-bit hi/lo split of ``a`` into
    two GEMMs (exact for ``k < 2**17`` at 24-bit moduli, which covers every
    supported layer). Falls back to int64 accumulation for anything else.
    """
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise FieldError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    k = a.shape[1]
    p = modulus
    if k == 0:
        return np.zeros((a.shape[0], b.shape[1]), dtype=np.int64)
    if k * p * p < _FLOAT64_EXACT:
        return _matmul_single(a, b, p)
    if k * (p << 12) < _FLOAT64_EXACT:
        return _matmul_split(a, b, p)
    return _matmul_int64(a, b, p)


def _matmul_single(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    prod = a.astype(np.float64) @ b.astype(np.float64)
    return np.mod(np.rint(prod).astype(np.int64), p)


def _matmul_split(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    # a = hi * 2**12 + lo with both halves < 2**12; each partial GEMM sums
    # values below k * 2**12 * p < 2**53, so float64 is exact.
    bf = b.astype(np.float64)
    hi = np.rint((a >> 12).astype(np.float64) @ bf).astype(np.int64)
    lo = np.rint((a & 0xFFF).astype(np.float64) @ bf).astype(np.int64)
    return np.mod(((hi % p) << 12) + lo, p)


def _matmul_int64(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    # Generic exact path; chunk the inner dimension so partial int64 sums
    # cannot overflow.
    step = max(1, (2**62) // (p * p))
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.int64)
    for start in range(0, a.shape[1], step):
        out += a[:, start : start + step] @ b[start : start + step, :]
        np.mod(out, p, out=out)
    return np.mod(out, p)
