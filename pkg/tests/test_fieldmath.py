"""Field arithmetic against exact big-integer oracles."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blindfold.fieldmath import (
    DEFAULT_MODULUS,
    FieldError,
    _matmul_int64,
    _matmul_single,
    _matmul_split,
    field_capacity_fan_in,
    field_matmul,
    negative_threshold,
    rescale_field,
    round_half_even_div,
    signed_view,
    to_field,
    validate_modulus,
)

SMALL_PRIMES = [3, 17, 251, 65521, 524287]


def bigint_matmul(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    """Oracle: exact matrix product over Python integers, then reduced."""
    out = (a.astype(object) @ b.astype(object)) % p
    return out.astype(np.int64)


# ---------------------------------------------------------------------------
# modulus choice


def test_default_modulus_accepted():
    validate_modulus(DEFAULT_MODULUS)
    assert DEFAULT_MODULUS == 2**24 - 3


@pytest.mark.parametrize("p", SMALL_PRIMES)
def test_small_primes_accepted(p):
    validate_modulus(p)


@pytest.mark.parametrize(
    "bad",
    [
        0,
        1,
        2,  # even
        16,
        2**24 - 1,  # composite (3 * 5 * 7 * 13 * 17 * 241)
        15485863 * 2,  # even composite
        33554467,  # prime, but 26 bits wide
        -7,
    ],
)
def test_bad_moduli_rejected(bad):
    with pytest.raises(FieldError):
        validate_modulus(bad)


# ---------------------------------------------------------------------------
# signed encoding


@pytest.mark.parametrize("p", [17, 251])
def test_signed_roundtrip_exhaustive(p):
    values = np.arange(p, dtype=np.int64)
    signed = signed_view(values, p)
    assert np.array_equal(to_field(signed, p), values)
    # negatives are exactly the top half
    threshold = negative_threshold(p)
    assert np.array_equal(signed < 0, values >= threshold)
    # signed range is symmetric for odd p
    assert signed.min() == -(p // 2)
    assert signed.max() == p // 2


def test_to_field_wraps_negatives():
    assert to_field(np.array([-1, -2, 5]), 17).tolist() == [16, 15, 5]


def test_capacity_formula():
    assert field_capacity_fan_in(DEFAULT_MODULUS, 256) == (DEFAULT_MODULUS - 1) // (
        2 * 256 * 256
    )
    assert field_capacity_fan_in(524287, 32) == (524287 - 1) // (2 * 32 * 32)


# ---------------------------------------------------------------------------
# round-half-to-even division


def oracle_half_even_div(n: int, d: int) -> int:
    """Oracle: Fraction-based round-half-to-even."""
    q = Fraction(n, d)
    floor = q.numerator // q.denominator
    rem = q - floor
    if rem > Fraction(1, 2):
        return floor + 1
    if rem < Fraction(1, 2):
        return floor
    return floor + 1 if floor % 2 else floor


@pytest.mark.parametrize("d", [1, 2, 3, 4, 7, 8, 10, 64, 256])
def test_round_half_even_exhaustive(d):
    numerators = np.arange(-1000, 1001, dtype=np.int64)
    got = round_half_even_div(numerators, d)
    want = np.array([oracle_half_even_div(int(n), d) for n in numerators])
    assert np.array_equal(got, want)


@given(st.integers(-(2**40), 2**40), st.integers(1, 2**20))
@settings(max_examples=300, deadline=None)
def test_round_half_even_property(n, d):
    got = int(round_half_even_div(np.array([n], dtype=np.int64), d)[0])
    assert got == oracle_half_even_div(n, d)
    # never further than half a divisor from the true quotient
    assert abs(Fraction(n, d) - got) <= Fraction(1, 2)


def test_rescale_field_matches_signed_division():
    p = 251
    data = np.arange(p, dtype=np.int64)
    got = rescale_field(data, p, 8)
    signed = signed_view(data, p)
    want = to_field(np.array([oracle_half_even_div(int(v), 8) for v in signed]), p)
    assert np.array_equal(got, want)


# ---------------------------------------------------------------------------
# exact modular matmul, all three strategies


def random_field_matrices(rng, p, shape_k=None):
    m = int(rng.integers(1, 7))
    k = shape_k or int(rng.integers(1, 40))
    n = int(rng.integers(1, 7))
    a = rng.integers(0, p, size=(m, k), dtype=np.int64)
    b = rng.integers(0, p, size=(k, n), dtype=np.int64)
    return a, b


@pytest.mark.parametrize("p", [251, 65521, 524287, DEFAULT_MODULUS])
def test_field_matmul_random_against_bigint(p):
    rng = np.random.default_rng(p)
    for _ in range(25):
        a, b = random_field_matrices(rng, p)
        assert np.array_equal(field_matmul(a, b, p), bigint_matmul(a, b, p))


@pytest.mark.parametrize("p", [524287, DEFAULT_MODULUS])
def test_field_matmul_worst_case_values(p):
    # every entry at p - 1: maximal accumulation, exactness must hold
    for k in (1, 31, 32, 33, 200, 1024):
        a = np.full((3, k), p - 1, dtype=np.int64)
        b = np.full((k, 4), p - 1, dtype=np.int64)
        assert np.array_equal(field_matmul(a, b, p), bigint_matmul(a, b, p))


@pytest.mark.parametrize("strategy", [_matmul_single, _matmul_split, _matmul_int64])
def test_each_strategy_against_bigint(strategy):
    p = 524287
    rng = np.random.default_rng(42)
    for _ in range(20):
        a, b = random_field_matrices(rng, p)
        assert np.array_equal(strategy(a, b, p), bigint_matmul(a, b, p))


def test_split_strategy_at_default_modulus():
    # k large enough that the single-product path would lose exactness
    p = DEFAULT_MODULUS
    rng = np.random.default_rng(9)
    a = rng.integers(0, p, size=(4, 600), dtype=np.int64)
    b = rng.integers(0, p, size=(600, 5), dtype=np.int64)
    assert np.array_equal(_matmul_split(a, b, p), bigint_matmul(a, b, p))
    assert np.array_equal(field_matmul(a, b, p), bigint_matmul(a, b, p))


def test_int64_fallback_chunks_long_inner_dim():
    p = DEFAULT_MODULUS
    rng = np.random.default_rng(10)
    a = rng.integers(0, p, size=(2, 3000), dtype=np.int64)
    b = rng.integers(0, p, size=(3000, 3), dtype=np.int64)
    assert np.array_equal(_matmul_int64(a, b, p), bigint_matmul(a, b, p))


def test_field_matmul_output_contract():
    p = 251
    rng = np.random.default_rng(3)
    a, b = random_field_matrices(rng, p, shape_k=10)
    out = field_matmul(a, b, p)
    assert out.dtype == np.int64
    assert out.min() >= 0 and out.max() < p
    # determinism
    assert np.array_equal(out, field_matmul(a, b, p))
