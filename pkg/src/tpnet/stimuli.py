"""Seeded synthetic stimuli: moving Gaussian bumps, shifting-window
pseudo-video over a still image, parameterized edge stimuli, and an
edge-rich scene generator used as stand-in natural training data."""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StimulusSpec:
    kind: str  # moving_gaussian | shifting_window | edge
    params: dict
    seed: int = 0


def gaussian_bump(size: tuple[int, int], center: tuple[float, float],
                  width: float) -> np.ndarray:
    """Unit-peak Gaussian at (x, y), truncated at the frame edges."""
    h, w = size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    cx, cy = center
    return np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * width**2))


def moving_gaussian(frames: int, size: tuple[int, int] = (10, 10),
                    width: float = 1.5, seed: int = 0) -> np.ndarray:
    """Bump drifting right 1 px/frame; on leaving the frame it restarts at
    x = 0 with a fresh uniform y. Returns (frames, h, w)."""
    if width <= 0:
        raise ValueError("width must be positive")
    h, w = size
    rng = np.random.default_rng(seed)
    out = np.empty((frames, h, w))
    x = 0.0
    y = float(rng.integers(0, h))  # integer row so the peak is exactly 1
    for t in range(frames):
        out[t] = gaussian_bump(size, (x, y), width)
        x += 1.0
        if x > w - 1:
            x = 0.0
            y = float(rng.integers(0, h))
    return out


def shifting_window(image: np.ndarray, window: tuple[int, int] = (100, 100),
                    frames: int = 10, seed: int = 0) -> np.ndarray:
    """Random walk of a crop window; each step moves 1 or 2 px in one of the
    8 directions. Returns (frames, wh, ww)."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    wh, ww = window
    if wh > h or ww > w:
        raise ValueError("window exceeds image size")
    rng = np.random.default_rng(seed)
    max_y, max_x = h - wh, w - ww
    y = int(rng.integers(0, max_y + 1)) if max_y > 0 else 0
    x = int(rng.integers(0, max_x + 1)) if max_x > 0 else 0
    out = np.empty((frames, wh, ww))
    directions = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    for t in range(frames):
        out[t] = image[y : y + wh, x : x + ww]
        for _ in range(100):
            dy, dx = directions[int(rng.integers(0, 8))]
            step = int(rng.integers(1, 3))
            ny, nx = y + dy * step, x + dx * step
            if 0 <= ny <= max_y and 0 <= nx <= max_x:
                y, x = ny, nx
                break
    return out


def edge_stimulus(orientation: float, position: float, size: int = 20,
                  softness: float = 1.0) -> np.ndarray:
    """Zero-mean step edge through `position` px from the patch center along
    the orientation normal, with a logistic transition profile."""
    half_diag = size * math.sqrt(2) / 2.0
    if abs(position) > half_diag:
        raise ValueError("edge position outside the patch")
    c = (size - 1) / 2.0
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    # signed distance from the edge line, along the normal
    nx, ny = math.cos(orientation), math.sin(orientation)
    d = (xs - c) * nx + (ys - c) * ny - position
    frame = 1.0 / (1.0 + np.exp(-d / softness))
    return frame - frame.mean()


def random_edge_scene(size: int = 300, n_edges: int = 120, seed: int = 0) -> np.ndarray:
    """Superposition of random soft oriented edges: sparse, oriented image
    statistics for training when natural footage is unavailable."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    scene = np.zeros((size, size))
    for _ in range(n_edges):
        theta = rng.uniform(0, math.pi)
        cx, cy = rng.uniform(0, size, 2)
        amp = rng.uniform(0.3, 1.0) * rng.choice([-1.0, 1.0])
        softness = rng.uniform(0.7, 2.0)
        extent = rng.uniform(8, 40)
        nx, ny = math.cos(theta), math.sin(theta)
        d = (xs - cx) * nx + (ys - cy) * ny
        along = -(xs - cx) * ny + (ys - cy) * nx
        profile = np.tanh(d / softness)
        envelope = np.exp(-(along**2) / (2.0 * extent**2)) * np.exp(
            -(d**2) / (2.0 * (4.0 * extent) ** 2))
        scene += amp * profile * envelope
    return scene
