"""Structural similarity between images, windowed the classic way.

An 11x11 Gaussian window (sigma 1.5) slides over the overlap-complete
("valid") region; per-window luminance/contrast/structure terms combine into
one score per window, averaged into the image score. Color images score each
channel independently and average. Statistics are population moments under
the Gaussian weights.

The score is invariant to multiplying both images by the same positive
factor when the data range scales along; it is not shift-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fieldmath import FieldError

DEFAULT_WINDOW = 11
DEFAULT_SIGMA = 1.5
DEFAULT_K1 = 0.01
DEFAULT_K2 = 0.03


def gaussian_window(size: int = DEFAULT_WINDOW, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Normalized 2D Gaussian weights."""
    if size < 1 or size % 2 == 0:
        raise FieldError(f"window size must be odd and positive, got {size}")
    if sigma <= 0:
        raise FieldError(f"sigma must be positive, got {sigma}")
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    one_d = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    window = np.outer(one_d, one_d)
    return window / window.sum()


def _windowed_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    size = window.shape[0]
    patches = np.lib.stride_tricks.sliding_window_view(img, (size, size))
    return np.tensordot(patches, window, axes=([2, 3], [0, 1]))


def _infer_data_range(a: np.ndarray, b: np.ndarray) -> float:
    if a.dtype == np.uint8 and b.dtype == np.uint8:
        return 255.0
    return 1.0


def _ssim_single_channel(
    a: np.ndarray, b: np.ndarray, data_range: float, window: np.ndarray, k1: float, k2: float
) -> float:
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = _windowed_mean(a, window)
    mu_b = _windowed_mean(b, window)
    var_a = _windowed_mean(a * a, window) - mu_a * mu_a
    var_b = _windowed_mean(b * b, window) - mu_b * mu_b
    cov = _windowed_mean(a * b, window) - mu_a * mu_b
    numer = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    denom = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(numer / denom))


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    data_range: float | None = None,
    window_size: int = DEFAULT_WINDOW,
    sigma: float = DEFAULT_SIGMA,
    k1: float = DEFAULT_K1,
    k2: float = DEFAULT_K2,
) -> float:
    """Structural similarity of two images.

    Accepts (H, W) grayscale or (H, W, C) color arrays; both images must
    share a shape at least as large as the window. ``data_range`` defaults to
    255 for uint8 pairs and 1.0 otherwise.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise FieldError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise FieldError(f"images must be (H, W) or (H, W, C), got shape {a.shape}")
    if min(a.shape[0], a.shape[1]) < window_size:
        raise FieldError(
            f"images of shape {a.shape} are smaller than the {window_size}x"
            f"{window_size} window"
        )
    if data_range is None:
        data_range = _infer_data_range(a, b)
    if data_range <= 0:
        raise FieldError(f"data_range must be positive, got {data_range}")
    window = gaussian_window(window_size, sigma)
    af = a.astype(np.float64)
    bf = b.astype(np.float64)
    if a.ndim == 2:
        return _ssim_single_channel(af, bf, data_range, window, k1, k2)
    scores = [
        _ssim_single_channel(af[..., c], bf[..., c], data_range, window, k1, k2)
        for c in range(a.shape[2])
    ]
    return float(np.mean(scores))


@dataclass(frozen=True)
class SsimReport:
    """Scores for a batch of image pairs."""

    scores: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores)) if self.scores else float("nan")

    @property
    def count(self) -> int:
        return len(self.scores)


def mean_ssim(
    references: np.ndarray,
    candidates: np.ndarray,
    data_range: float | None = None,
    **kwargs,
) -> SsimReport:
    """Pairwise SSIM over equally shaped stacks of images."""
    references = np.asarray(references)
    candidates = np.asarray(candidates)
    if references.shape != candidates.shape:
        raise FieldError(
            f"stacks differ in shape: {references.shape} vs {candidates.shape}"
        )
    if references.ndim not in (3, 4):
        raise FieldError("stacks must be (n, H, W) or (n, H, W, C)")
    scores = tuple(
        ssim(references[i], candidates[i], data_range=data_range, **kwargs)
        for i in range(references.shape[0])
    )
    return SsimReport(scores=scores)
