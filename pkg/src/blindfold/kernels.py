"""Layer kernels over quantized tensors.

Linear kernels (conv2d, dense) return raw products at scale**2 so callers
can decide where bias addition and rescaling happen; that split is what lets
a blinded offload produce bit-identical results to in-place execution.
All activation tensors are NHWC; dense inputs flatten in C order.
"""

from __future__ import annotations

import numpy as np

from .fieldmath import (
    FieldError,
    field_matmul,
    negative_threshold,
    rescale_field,
    signed_view,
    to_field,
)
from .tensors import FloatTensor, QuantizedTensor, check_same_field

# Upper bound on the int64 im2col slab materialized per GEMM call; keeps the
# float64 working set for the largest VGG layers around 2x this figure.
_CHUNK_BYTES = 64 << 20


def conv2d(
    x: QuantizedTensor,
    w: QuantizedTensor,
    stride: int = 1,
    padding: int = 0,
) -> QuantizedTensor:
    """2D convolution, NHWC input against (kh, kw, cin, cout) kernel.

    Returns the raw linear map at scale ``x.scale * w.scale``.
    """
    check_same_field(x, w)
    if x.data.ndim != 4:
        raise FieldError(f"conv2d expects NHWC input, got shape {x.shape}")
    if w.data.ndim != 4:
        raise FieldError(f"conv2d expects (kh, kw, cin, cout) weights, got {w.shape}")
    n, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if cin != wcin:
        raise FieldError(f"channel mismatch: input has {cin}, kernel expects {wcin}")
    if stride < 1 or padding < 0:
        raise FieldError(f"bad stride/padding: {stride}/{padding}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1 or (h + 2 * padding) < kh or (wd + 2 * padding) < kw:
        raise FieldError(f"kernel {kh}x{kw} does not fit input {h}x{wd} (pad {padding})")

    data = x.data
    if padding:
        data = np.pad(data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(data, (kh, kw), axis=(1, 2))
    # windows: (n, ho*, wo*, c, kh, kw) -> strided to the stride grid, then
    # reordered so each row is a (kh, kw, cin) patch matching weight layout.
    windows = windows[:, ::stride, ::stride]
    windows = windows.transpose(0, 1, 2, 4, 5, 3)

    wf = w.data.reshape(kh * kw * cin, cout)
    out = np.empty((n, ho, wo, cout), dtype=np.int64)
    fan_in = kh * kw * cin
    rows_per_chunk = max(1, _CHUNK_BYTES // (fan_in * 8 * wo))
    for i in range(n):
        for r0 in range(0, ho, rows_per_chunk):
            r1 = min(ho, r0 + rows_per_chunk)
            patch = windows[i, r0:r1].reshape((r1 - r0) * wo, fan_in)
            out[i, r0:r1] = field_matmul(patch, wf, x.modulus).reshape(r1 - r0, wo, cout)
    return QuantizedTensor(out, x.scale * w.scale, x.modulus)


def dense(x: QuantizedTensor, w: QuantizedTensor) -> QuantizedTensor:
    """Fully connected layer; flattens trailing input dims in C order.

    Returns the raw linear map at scale ``x.scale * w.scale``.
    """
    check_same_field(x, w)
    if w.data.ndim != 2:
        raise FieldError(f"dense expects 2D weights, got {w.shape}")
    data = x.data
    if data.ndim == 1:
        data = data[None, :]
    elif data.ndim > 2:
        data = data.reshape(data.shape[0], -1)
    if data.shape[1] != w.shape[0]:
        raise FieldError(f"dense shape mismatch: input {data.shape} vs weights {w.shape}")
    out = field_matmul(data, w.data, x.modulus)
    return QuantizedTensor(out, x.scale * w.scale, x.modulus)


def relu(x: QuantizedTensor) -> QuantizedTensor:
    """Zero every element encoding a negative value."""
    thresh = negative_threshold(x.modulus)
    return x.with_data(np.where(x.data >= thresh, 0, x.data))


def maxpool2d(x: QuantizedTensor, window: int = 2, stride: int = 2) -> QuantizedTensor:
    """Max pooling over the signed interpretation of the field values."""
    if x.data.ndim != 4:
        raise FieldError(f"maxpool2d expects NHWC input, got shape {x.shape}")
    if window < 1 or stride < 1:
        raise FieldError(f"bad window/stride: {window}/{stride}")
    n, h, w, c = x.shape
    if h < window or w < window or (h - window) % stride or (w - window) % stride:
        raise FieldError(
            f"pool window {window} stride {stride} does not tile input {h}x{w}"
        )
    signed = signed_view(x.data, x.modulus)
    tiles = np.lib.stride_tricks.sliding_window_view(signed, (window, window), axis=(1, 2))
    tiles = tiles[:, ::stride, ::stride]
    pooled = tiles.max(axis=(4, 5))
    return x.with_data(to_field(pooled, x.modulus))


def add_bias(x: QuantizedTensor, bias: QuantizedTensor) -> QuantizedTensor:
    """Add a per-channel bias (already at the raw product scale) mod p."""
    check_same_field(x, bias)
    if bias.scale != x.scale:
        raise FieldError(f"bias scale {bias.scale} != tensor scale {x.scale}")
    return x.with_data(np.mod(x.data + bias.data, x.modulus))


def rescale(x: QuantizedTensor, divisor: int) -> QuantizedTensor:
    """Drop one scale factor: signed divide by ``divisor``, half to even."""
    if x.scale % divisor:
        raise FieldError(f"scale {x.scale} not divisible by {divisor}")
    return QuantizedTensor(
        rescale_field(x.data, x.modulus, divisor), x.scale // divisor, x.modulus
    )


def linear_postprocess(
    raw: QuantizedTensor,
    bias: QuantizedTensor | None,
    weight_scale: int,
    apply_relu: bool,
) -> QuantizedTensor:
    """Shared epilogue for every linear layer, wherever it executed.

    Bias (stored at the raw product scale) is added before rescaling; the
    fused ReLU runs last. Blinded offload applies this only after unblinding,
    which is why outputs match in-place execution bit for bit.
    """
    out = add_bias(raw, bias) if bias is not None else raw
    out = rescale(out, weight_scale)
    if apply_relu:
        out = relu(out)
    return out


def softmax(logits: FloatTensor) -> FloatTensor:
    """Row-wise softmax over float logits (shift-stable)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        logits = logits[None, :]
    if logits.ndim != 2:
        raise FieldError(f"softmax expects (n, k) logits, got shape {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)
