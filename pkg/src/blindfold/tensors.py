"""Quantized tensors: fixed-point values living in the prime field.

``FloatTensor`` is a plain float numpy array (an alias, not a wrapper); the
quantized side carries its field parameters explicitly so every kernel can
check that operands agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fieldmath import (
    FieldError,
    negative_threshold,
    signed_view,
    to_field,
    validate_modulus,
)

# Alias for documentation purposes: any finite float numpy array.
FloatTensor = np.ndarray


class QuantizationError(ValueError):
    """Raised when a float tensor cannot be represented in the field."""


@dataclass(frozen=True)
class QuantizedTensor:
    """An int64 array of field elements plus its fixed-point parameters.

    ``data`` values lie in [0, modulus); elements at or above modulus/2
    encode negatives. ``scale`` counts quantization steps per unit value.
    """

    data: np.ndarray
    scale: int
    modulus: int

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.int64)
        if int(self.scale) < 1:
            raise FieldError(f"scale must be >= 1, got {self.scale}")
        validate_modulus(self.modulus)
        if data.size and (data.min() < 0 or data.max() >= self.modulus):
            raise FieldError("tensor data outside [0, modulus)")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "scale", int(self.scale))
        object.__setattr__(self, "modulus", int(self.modulus))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def nbytes_transport(self) -> int:
        # Accounting convention: field elements travel as 4-byte words.
        return 4 * self.data.size

    def with_data(self, data: np.ndarray, scale: int | None = None) -> "QuantizedTensor":
        return QuantizedTensor(data, self.scale if scale is None else scale, self.modulus)

    def signed(self) -> np.ndarray:
        return signed_view(self.data, self.modulus)


def check_same_field(a: QuantizedTensor, b: QuantizedTensor) -> None:
    if a.modulus != b.modulus:
        raise FieldError(f"modulus mismatch: {a.modulus} vs {b.modulus}")


def quantize(values: FloatTensor, scale: int, modulus: int) -> QuantizedTensor:
    """Round ``values * scale`` half-to-even and map into the field.

    Raises QuantizationError naming the first offending element when a value
    falls outside the representable signed range.
    """
    validate_modulus(modulus)
    if scale < 1:
        raise FieldError(f"scale must be >= 1, got {scale}")
    values = np.asarray(values, dtype=np.float64)
    if values.size and not np.all(np.isfinite(values)):
        idx = np.unravel_index(int(np.argmin(np.isfinite(values))), values.shape)
        raise QuantizationError(f"non-finite value at index {tuple(map(int, idx))}")
    steps = np.round(values * scale)
    limit = (modulus - 1) // 2
    if steps.size:
        bad = np.abs(steps) > limit
        if bad.any():
            idx = np.unravel_index(int(np.argmax(bad)), values.shape)
            raise QuantizationError(
                f"value {float(values[idx])} at index {tuple(map(int, idx))} "
                f"exceeds field range (|round(v*{scale})| > {limit})"
            )
    return QuantizedTensor(to_field(steps.astype(np.int64), modulus), scale, modulus)


def dequantize(tensor: QuantizedTensor) -> FloatTensor:
    """Map field elements back to floats: signed value divided by scale."""
    return tensor.signed().astype(np.float64) / tensor.scale


def zeros_like_field(shape: tuple[int, ...], scale: int, modulus: int) -> QuantizedTensor:
    return QuantizedTensor(np.zeros(shape, dtype=np.int64), scale, modulus)


def negative_count(tensor: QuantizedTensor) -> int:
    """Number of elements encoding negative values (>= modulus/2)."""
    return int(np.count_nonzero(tensor.data >= negative_threshold(tensor.modulus)))
