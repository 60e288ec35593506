"""Model analysis: Gabor fits to filters, orientation hue maps, edge
response profiles, pooled-cell parameter estimates, topography statistics,
and position-invariance indices."""

import colorsys
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares


class InsufficientDataError(ValueError):
    pass


@dataclass
class GaborFit:
    orientation: float  # radians, in [0, pi)
    frequency: float  # cycles / px
    phase: float
    center: tuple[float, float]  # (x, y) px
    sigma_x: float  # envelope width along the carrier
    sigma_y: float
    amplitude: float
    r2: float
    degenerate: bool = False


def gabor_patch(shape: tuple[int, int], orientation: float, frequency: float,
                phase: float, center: tuple[float, float], sigma_x: float,
                sigma_y: float, amplitude: float) -> np.ndarray:
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    cx, cy = center
    ct, st = math.cos(orientation), math.sin(orientation)
    xr = (xs - cx) * ct + (ys - cy) * st
    yr = -(xs - cx) * st + (ys - cy) * ct
    envelope = np.exp(-(xr**2 / (2.0 * sigma_x**2) + yr**2 / (2.0 * sigma_y**2)))
    return amplitude * envelope * np.cos(2.0 * math.pi * frequency * xr + phase)


def _fft_init(patch: np.ndarray) -> tuple[float, float]:
    """Initial (orientation, frequency) from the dominant Fourier peak."""
    h, w = patch.shape
    spec = np.abs(np.fft.fft2(patch - patch.mean()))
    fy = np.fft.fftfreq(h)
    fx = np.fft.fftfreq(w)
    spec[0, 0] = 0.0
    iy, ix = np.unravel_index(np.argmax(spec), spec.shape)
    ky, kx = fy[iy], fx[ix]
    theta = math.atan2(ky, kx) % math.pi
    return theta, math.hypot(kx, ky)


def fit_gabor(patch: np.ndarray) -> GaborFit:
    """Least-squares Gabor fit: Fourier-peak initialization then local
    refinement. Degenerate (near-constant) patches come back flagged."""
    patch = np.asarray(patch, dtype=np.float64)
    h, w = patch.shape
    if h < 5 or w < 5:
        raise ValueError("patch must be at least 5x5")
    ss_tot = float(np.sum((patch - patch.mean()) ** 2))
    if ss_tot < 1e-12 * patch.size or patch.std() < 1e-9:
        return GaborFit(0.0, 0.0, 0.0, ((w - 1) / 2, (h - 1) / 2),
                        w / 4, h / 4, 0.0, 0.0, degenerate=True)

    theta0, freq0 = _fft_init(patch)
    freq0 = max(freq0, 1.0 / (2.0 * max(h, w)))
    energy = patch**2
    total = energy.sum()
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    cx0 = float((energy * xs).sum() / total)
    cy0 = float((energy * ys).sum() / total)
    amp0 = 2.0 * float(patch.std())

    def residuals(p):
        theta, freq, phase, cx, cy, lsx, lsy, amp = p
        model = gabor_patch(patch.shape, theta, freq, phase, (cx, cy),
                            math.exp(lsx), math.exp(lsy), amp)
        return (model - patch).ravel()

    best = None
    for phase0 in (0.0, math.pi / 2):
        for sigma0 in (max(h, w) / 6.0, max(h, w) / 3.0):
            p0 = [theta0, freq0, phase0, cx0, cy0,
                  math.log(sigma0), math.log(sigma0), amp0]
            try:
                sol = least_squares(residuals, p0, method="lm", max_nfev=400)
            except Exception:
                continue
            if best is None or sol.cost < best.cost:
                best = sol
    if best is None:
        return GaborFit(theta0, freq0, 0.0, (cx0, cy0), w / 4, h / 4, amp0, 0.0,
                        degenerate=True)
    theta, freq, phase, cx, cy, lsx, lsy, amp = best.x
    if freq < 0:
        freq, phase = -freq, -phase
        theta += math.pi
    if amp < 0:
        amp, phase = -amp, phase + math.pi
    theta %= math.pi
    phase = (phase + math.pi) % (2.0 * math.pi) - math.pi
    ss_res = float(2.0 * best.cost)
    r2 = max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return GaborFit(theta, freq, phase, (float(cx), float(cy)),
                    math.exp(lsx), math.exp(lsy), float(amp), r2)


def orientation_map(fits, r2_threshold: float = 0.5) -> np.ndarray:
    """Hue image from a 2-D grid of fits (orientation over [0, pi) mapped to
    the color wheel; low-r2 cells desaturated). Returns (h, w, 3) RGB."""
    fits = np.asarray(fits, dtype=object)
    h, w = fits.shape
    out = np.zeros((h, w, 3))
    for i in range(h):
        for j in range(w):
            f = fits[i, j]
            hue = (f.orientation % math.pi) / math.pi
            sat = 1.0 if (f.r2 >= r2_threshold and not f.degenerate) else 0.15
            out[i, j] = colorsys.hsv_to_rgb(hue, sat, 1.0)
    return out


def response_profile(encode_fn, orientations, positions, size: int = 20,
                     softness: float = 1.0) -> np.ndarray:
    """Feed-forward responses to a grid of edge stimuli.

    Returns a structured array with fields (cell, orientation, position,
    activation); encode_fn maps a frame to a 1-D code vector.
    """
    from .stimuli import edge_stimulus

    rows = []
    for theta in orientations:
        for pos in positions:
            code = np.asarray(encode_fn(edge_stimulus(theta, pos, size, softness)))
            for cell, act in enumerate(code):
                rows.append((cell, float(theta), float(pos), float(act)))
    return np.array(rows, dtype=[("cell", "i4"), ("orientation", "f8"),
                                 ("position", "f8"), ("activation", "f8")])


@dataclass
class PooledCellParams:
    orientation: float
    frequency: float
    magnitude: float  # circular-mean resultant length in [0, 1]
    defined: bool


def complex_cell_params(connections: np.ndarray, simple_fits) -> list[PooledCellParams]:
    """Per-pooled-cell orientation/frequency: connection-squared-weighted
    circular mean of the simple-cell fits, using doubled angles."""
    connections = np.asarray(connections, dtype=np.float64)
    if connections.shape[0] != len(simple_fits):
        raise ValueError("one fit per simple cell required")
    thetas = np.array([f.orientation for f in simple_fits])
    freqs = np.array([f.frequency for f in simple_fits])
    out = []
    for c in range(connections.shape[1]):
        w = connections[:, c] ** 2
        total = float(w.sum())
        if total <= 0:
            out.append(PooledCellParams(0.0, 0.0, 0.0, defined=False))
            continue
        sx = float(np.sum(w * np.cos(2.0 * thetas))) / total
        sy = float(np.sum(w * np.sin(2.0 * thetas))) / total
        mag = math.hypot(sx, sy)
        if mag < 1e-8:
            out.append(PooledCellParams(0.0, float(np.sum(w * freqs)) / total,
                                        mag, defined=False))
            continue
        theta = 0.5 * math.atan2(sy, sx) % math.pi
        out.append(PooledCellParams(theta, float(np.sum(w * freqs)) / total,
                                    mag, defined=True))
    return out


def _pair_distances(grid: np.ndarray, wrap: bool) -> np.ndarray:
    """Circular distances (doubled angles) between 4-neighbor pairs; NaN
    entries drop the pairs they touch."""
    dists = []
    h, w = grid.shape
    shifts = [(0, 1), (1, 0)]
    for dy, dx in shifts:
        if wrap:
            a, b = grid, np.roll(grid, (-dy, -dx), axis=(0, 1))
        else:
            a = grid[: h - dy, : w - dx]
            b = grid[dy:, dx:]
        d = np.angle(np.exp(2j * (a - b)))
        dists.append((0.5 * np.abs(d)).ravel())
    d = np.concatenate(dists)
    return d[~np.isnan(d)]


def topography_score(orientations: np.ndarray, n_permutations: int = 1000,
                     seed: int = 0, wrap: bool = False) -> tuple[float, float]:
    """Mean neighbor circular distance plus a permutation p-value (small
    score and p: smoother-than-chance orientation map)."""
    grid = np.asarray(orientations, dtype=np.float64)
    valid = ~np.isnan(grid)
    if int(valid.sum()) < 10:
        raise InsufficientDataError("fewer than 10 valid fits")
    score = float(np.mean(_pair_distances(grid, wrap)))
    rng = np.random.default_rng(seed)
    values = grid[valid]
    at_or_below = 0
    for _ in range(n_permutations):
        perm = grid.copy()
        perm[valid] = rng.permutation(values)
        if float(np.mean(_pair_distances(perm, wrap))) <= score:
            at_or_below += 1
    p = (1 + at_or_below) / (1 + n_permutations)
    return score, p


def position_invariance_ratios(responses: np.ndarray) -> np.ndarray:
    """Per-unit ratio of variance across x (mean over y) to variance across
    y (mean over x). Low ratio: the unit is invariant along x.

    responses: (n_units, n_y, n_x).
    """
    responses = np.asarray(responses, dtype=np.float64)
    var_x = responses.var(axis=2).mean(axis=1)  # vary x at fixed y
    var_y = responses.var(axis=1).mean(axis=1)  # vary y at fixed x
    with np.errstate(divide="ignore", invalid="ignore"):
        return var_x / var_y
