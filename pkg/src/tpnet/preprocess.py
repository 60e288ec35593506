"""Local mean removal and divisive contrast normalization.

Every frame is high-pass filtered by subtracting a Gaussian-weighted
neighborhood mean, then divided by the Gaussian-weighted local standard
deviation with a cutoff that leaves low-variance regions mostly alone.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d


@dataclass(frozen=True)
class PreprocessConfig:
    gaussian_width: float = 11.3  # sigma, in pixels
    cutoff: float | None = None  # None: 0.1 * global std of the mean-subtracted frame
    cutoff_mode: str = "max"  # "max": max(sigma_local, c); "soft": sqrt(sigma_local^2 + c^2)

    def __post_init__(self):
        if self.gaussian_width <= 0:
            raise ValueError("gaussian_width must be positive")
        if self.cutoff is not None and self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        if self.cutoff_mode not in ("max", "soft"):
            raise ValueError(f"unknown cutoff_mode {self.cutoff_mode!r}")


def check_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.size == 0:
        raise ValueError("frame must be a non-empty 2-D array")
    if not np.all(np.isfinite(frame)):
        raise ValueError("frame contains NaN or Inf")
    return frame


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D Gaussian truncated at +-3 sigma, normalized to sum 1."""
    radius = max(int(math.ceil(3.0 * sigma)), 1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _weighted_mean(frame: np.ndarray, sigma: float) -> np.ndarray:
    # Zero-fill convolution divided by the in-bounds weight mass: this
    # renormalizes the kernel over the clipped support at the borders.
    k = gaussian_kernel(sigma)
    num = convolve1d(frame, k, axis=0, mode="constant", cval=0.0)
    num = convolve1d(num, k, axis=1, mode="constant", cval=0.0)
    den = convolve1d(np.ones_like(frame), k, axis=0, mode="constant", cval=0.0)
    den = convolve1d(den, k, axis=1, mode="constant", cval=0.0)
    return num / den


def local_mean_subtract(frame: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    frame = check_frame(frame)
    return frame - _weighted_mean(frame, cfg.gaussian_width)


def local_std(frame: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Gaussian-weighted local standard deviation."""
    frame = check_frame(frame)
    mean = _weighted_mean(frame, cfg.gaussian_width)
    second = _weighted_mean(frame**2, cfg.gaussian_width)
    return np.sqrt(np.maximum(second - mean**2, 0.0))


def _resolve_cutoff(frame: np.ndarray, cfg: PreprocessConfig) -> float:
    if cfg.cutoff is not None:
        return cfg.cutoff
    c = 0.1 * float(frame.std())
    return c if c > 0 else 1.0


def contrast_normalize(frame: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Divide each pixel by its local std, floored by a cutoff.

    Expects the frame to be mean-subtracted already.
    """
    frame = check_frame(frame)
    sigma_local = local_std(frame, cfg)
    c = _resolve_cutoff(frame, cfg)
    if cfg.cutoff_mode == "max":
        divisor = np.maximum(sigma_local, c)
    else:
        divisor = np.sqrt(sigma_local**2 + c**2)
    return frame / divisor


def preprocess(frame: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    return contrast_normalize(local_mean_subtract(frame, cfg), cfg)
