"""Locally-connected network with periodic tile weight sharing.

Units live on a regular cell grid over the image. Each unit reads (and its
decoder writes) a local pixel rectangle. Bulk units whose coordinates differ
by a tile period share one filter object; units whose receptive field is
clipped by the image border own independent filters. Joint inference over
the whole image lets overlapping units compete to explain the input.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .groupsparse import GroupSparsityConfig, group_penalty, group_penalty_grad
from .sparse import (CodeState, SparseHyper, DOUBLE_TANH, TANH, soft_threshold)


def _as_density(d) -> Fraction:
    f = Fraction(d).limit_denominator(10**6)
    if not (f.denominator == 1 or f.numerator == 1) or f <= 0:
        raise ValueError(f"density must be a positive integer or its reciprocal, got {d}")
    return f


@dataclass(frozen=True)
class LocalTopology:
    """Geometry of the cell grid. All per-axis tuples are (y, x) ordered to
    match image array indexing. Periodicity is in cell units (or None)."""

    image_size: tuple[int, int]
    neighborhood: tuple[int, int]
    density: tuple = (1, 1)
    periodicity: tuple[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "density",
                           tuple(_as_density(d) for d in self.density))
        for n, p in zip(self.image_size, self.neighborhood):
            if n < 1 or p < 1:
                raise ValueError("image size and neighborhood must be >= 1")
        for n, rho in zip(self.image_size, self.density):
            if (n * rho).denominator != 1:
                raise ValueError("image size times density must be integral")
        if self.periodicity is not None:
            for t, rho in zip(self.periodicity, self.density):
                if t < 1:
                    raise ValueError("periodicity must be >= 1 cell")
                if Fraction(t) / rho != int(Fraction(t) / rho):
                    raise ValueError("tile period must be a whole number of pixels")
            lo, hi = self.bulk_range
            for axis in range(2):
                if hi[axis] - lo[axis] + 1 < self.periodicity[axis]:
                    raise ValueError("image too small: no full tile of bulk units")

    @property
    def cells(self) -> tuple[int, int]:
        return tuple(int(n * rho) for n, rho in zip(self.image_size, self.density))

    def _axis_bounds(self, s: int, axis: int) -> tuple[int, int, bool]:
        rho = self.density[axis]
        p = self.neighborhood[axis]
        n = self.image_size[axis]
        lo_raw = Fraction(s) / rho - Fraction(p, 2)
        hi_raw = Fraction(s) / rho + Fraction(p, 2)
        lo, hi = math.floor(lo_raw), math.floor(hi_raw)
        clipped = lo < 0 or hi > n
        return max(lo, 0), min(hi, n), clipped

    def receptive_field(self, s: tuple[int, int]) -> tuple[int, int, int, int]:
        """Pixel rectangle (y0, y1, x0, x1), half-open, for cell s = (sy, sx)."""
        for c, limit in zip(s, self.cells):
            if not 0 <= c < limit:
                raise IndexError(f"cell {s} outside grid {self.cells}")
        y0, y1, _ = self._axis_bounds(s[0], 0)
        x0, x1, _ = self._axis_bounds(s[1], 1)
        if y1 <= y0 or x1 <= x0:
            raise ValueError(f"cell {s} has an empty receptive field")
        return y0, y1, x0, x1

    def is_boundary(self, s: tuple[int, int]) -> bool:
        return any(self._axis_bounds(s[axis], axis)[2] for axis in range(2))

    @property
    def bulk_range(self) -> tuple[tuple[int, int], tuple[int, int]]:
        """Per-axis [first, last] cell index with an unclipped receptive field."""
        lo, hi = [], []
        for axis in range(2):
            rho = self.density[axis]
            p = self.neighborhood[axis]
            n = self.image_size[axis]
            first = math.ceil(rho * Fraction(p, 2))
            last = self.cells[axis] - 1
            while last >= first and self._axis_bounds(last, axis)[2]:
                last -= 1
            if last < first:
                raise ValueError("topology has no bulk units")
            lo.append(first)
            hi.append(last)
        return (lo[0], lo[1]), (hi[0], hi[1])

    def canonical(self, s: tuple[int, int]) -> tuple[int, int]:
        """Tile-canonical representative of a bulk cell (identity if aperiodic)."""
        if self.periodicity is None:
            return tuple(s)
        lo, _ = self.bulk_range
        return tuple(lo[axis] + (s[axis] - lo[axis]) % self.periodicity[axis]
                     for axis in range(2))

    def connection_count(self) -> int:
        total = 0
        cy, cx = self.cells
        for sy in range(cy):
            y0, y1, _ = self._axis_bounds(sy, 0)
            h = y1 - y0
            for sx in range(cx):
                x0, x1, _ = self._axis_bounds(sx, 1)
                total += h * (x1 - x0)
        return total


@dataclass
class UnitFilter:
    """One filter: decoder column and encoder row over the unit's window,
    plus the encoder gain and bias. Shared by all units that alias it."""

    decode: np.ndarray
    encode_w: np.ndarray
    gain: float = 1.0
    bias: float = 0.0

    def normalize(self) -> None:
        n = float(np.linalg.norm(self.decode))
        if n > 0:
            self.decode /= n


@dataclass
class Unit:
    cell: tuple[int, int]
    rect: tuple[int, int, int, int]
    flat_idx: np.ndarray
    key: tuple
    filter: UnitFilter


class LocalNet:
    """Tiled locally-connected encoder-decoder layer."""

    def __init__(self, topo: LocalTopology, rng: np.random.Generator | None = None,
                 flavor: str = DOUBLE_TANH, notch: float = 0.5):
        if flavor not in (TANH, DOUBLE_TANH):
            raise ValueError(f"unknown encoder flavor {flavor!r}")
        self.topo = topo
        self.flavor = flavor
        self.notch = notch
        rng = rng or np.random.default_rng(0)
        h, w = topo.image_size
        cy, cx = topo.cells

        # enumerate filter keys in a fixed order: tile canonicals first
        # (raster over the tile), then boundary cells (raster)
        keys: list[tuple] = []
        cell_key: dict[tuple[int, int], tuple] = {}
        for sy in range(cy):
            for sx in range(cx):
                s = (sy, sx)
                if topo.is_boundary(s):
                    cell_key[s] = ("bnd", sy, sx)
                else:
                    c = topo.canonical(s)
                    cell_key[s] = ("tile", c[0], c[1])
        seen = set()
        for sy in range(cy):
            for sx in range(cx):
                k = cell_key[(sy, sx)]
                if k[0] == "tile" and k not in seen:
                    seen.add(k)
                    keys.append(k)
        for sy in range(cy):
            for sx in range(cx):
                k = cell_key[(sy, sx)]
                if k[0] == "bnd":
                    keys.append(k)

        self.filters: dict[tuple, UnitFilter] = {}
        for k in keys:
            s = (k[1], k[2])
            y0, y1, x0, x1 = topo.receptive_field(s)
            shape = (y1 - y0, x1 - x0)
            f = UnitFilter(decode=rng.standard_normal(shape),
                           encode_w=np.zeros(shape))
            f.normalize()
            f.encode_w = f.decode.copy()
            self.filters[k] = f

        self.units: list[Unit] = []
        for sy in range(cy):
            for sx in range(cx):
                s = (sy, sx)
                y0, y1, x0, x1 = topo.receptive_field(s)
                ys, xs = np.mgrid[y0:y1, x0:x1]
                flat = (ys * w + xs).ravel()
                self.units.append(Unit(cell=s, rect=(y0, y1, x0, x1),
                                       flat_idx=flat, key=cell_key[s],
                                       filter=self.filters[cell_key[s]]))
        self._filter_units: dict[tuple, list[int]] = {k: [] for k in keys}
        for i, u in enumerate(self.units):
            self._filter_units[u.key].append(i)
        self._build_matrices()

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def n_pixels(self) -> int:
        h, w = self.topo.image_size
        return h * w

    def weight_lookup(self, s: tuple[int, int]) -> UnitFilter:
        cy, cx = self.topo.cells
        if not (0 <= s[0] < cy and 0 <= s[1] < cx):
            raise IndexError(f"cell {s} outside grid {self.topo.cells}")
        return self.units[s[0] * cx + s[1]].filter

    def tile_filters(self) -> dict[tuple[int, int], UnitFilter]:
        return {(k[1], k[2]): f for k, f in self.filters.items() if k[0] == "tile"}

    # -- compiled sparse operators -------------------------------------------

    def _build_matrices(self) -> None:
        indptr = np.zeros(self.n_units + 1, dtype=np.int64)
        for i, u in enumerate(self.units):
            indptr[i + 1] = indptr[i] + u.flat_idx.size
        indices = np.concatenate([u.flat_idx for u in self.units])
        dec = np.concatenate([u.filter.decode.ravel() for u in self.units])
        enc = np.concatenate([u.filter.encode_w.ravel() for u in self.units])
        self._col_slice = [slice(indptr[i], indptr[i + 1]) for i in range(self.n_units)]
        self._A = sp.csc_matrix((dec, indices, indptr),
                                shape=(self.n_pixels, self.n_units))
        self._E = sp.csr_matrix((enc, indices.copy(), indptr.copy()),
                                shape=(self.n_units, self.n_pixels))
        self._gain = np.array([u.filter.gain for u in self.units])
        self._bias = np.array([u.filter.bias for u in self.units])

    def _sync_units(self, unit_ids) -> None:
        for i in unit_ids:
            u = self.units[i]
            self._A.data[self._col_slice[i]] = u.filter.decode.ravel()
            self._E.data[self._col_slice[i]] = u.filter.encode_w.ravel()
            self._gain[i] = u.filter.gain
            self._bias[i] = u.filter.bias

    def sync(self) -> None:
        self._sync_units(range(self.n_units))

    def decoder_matrix(self) -> sp.csc_matrix:
        return self._A

    # -- forward / inference -------------------------------------------------

    def encode_image(self, frame: np.ndarray) -> np.ndarray:
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != self.topo.image_size:
            raise ValueError(f"frame shape {frame.shape} != {self.topo.image_size}")
        y = self._E @ frame.ravel() + self._bias
        if self.flavor == TANH:
            return self._gain * np.tanh(y)
        u = self.notch
        return self._gain * (np.tanh(y + u) + np.tanh(y - u))

    def _lipschitz(self, iters: int = 12) -> float:
        v = np.ones(self.n_units) / math.sqrt(self.n_units)
        for _ in range(iters):
            w = self._A.T @ (self._A @ v)
            n = np.linalg.norm(w)
            if n == 0:
                return 1.0
            v = w / n
        return 2.4 * float(v @ (self._A.T @ (self._A @ v)))  # 1.2x safety

    def _energy(self, x, z, hyper, group_cfg):
        r = x - self._A @ z
        e = float(r @ r)
        if group_cfg is None:
            return e + hyper.alpha * float(np.sum(np.abs(z)))
        return e + group_penalty(z.reshape(self.topo.cells), group_cfg)

    def _code_steps(self, x, z, energy, n_steps, step, hyper, group_cfg,
                    trace=None):
        """A few monotone descent iterations on the code; returns (z, energy)."""
        for _ in range(n_steps):
            g = 2.0 * (self._A.T @ (self._A @ z - x))
            if group_cfg is not None:
                g = g + group_penalty_grad(z.reshape(self.topo.cells),
                                           group_cfg).ravel()
            t = step
            for _ in range(60):
                if group_cfg is None:
                    z_new = soft_threshold(z - t * g, t * hyper.alpha)
                else:
                    z_new = z - t * g
                e_new = self._energy(x, z_new, hyper, group_cfg)
                if e_new <= energy + 1e-12:
                    break
                t *= 0.5
            if e_new > energy:
                z_new, e_new = z, energy
            z, energy = z_new, e_new
            if trace is not None:
                trace.append(energy)
        return z, energy

    def infer_image_code(self, frame: np.ndarray, hyper: SparseHyper,
                         group_cfg: GroupSparsityConfig | None = None,
                         record_trace: bool = False) -> CodeState:
        """Joint sparse inference over all units ("explaining away")."""
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != self.topo.image_size:
            raise ValueError(f"frame shape {frame.shape} != {self.topo.image_size}")
        x = frame.ravel()
        z = np.zeros(self.n_units)
        energy = self._energy(x, z, hyper, group_cfg)
        trace = [energy] if record_trace else None
        step = 1.0 / self._lipschitz()
        converged = False
        iterations = 0
        for iterations in range(1, hyper.max_iters + 1):
            e_prev = energy
            z, energy = self._code_steps(x, z, energy, 1, step, hyper, group_cfg,
                                         trace)
            if e_prev - energy <= hyper.tolerance * max(abs(energy), 1.0):
                converged = True
                break
        return CodeState(z=z, energy=energy, iterations=iterations,
                         converged=converged,
                         energy_trace=np.array(trace) if record_trace else None)

    # -- training ------------------------------------------------------------

    def train_frame(self, frame: np.ndarray, hyper: SparseHyper, lr: float = 0.05,
                    group_cfg: GroupSparsityConfig | None = None,
                    code_iters: int = 3, infer_iters: int | None = None,
                    train_encoder: bool = True, lr_enc: float | None = None,
                    site_keys: list | None = None) -> dict:
        """One per-site training sweep over a frame.

        Infers the whole-image code, then visits every filter site in a fixed
        order: update that site's weights (with backtracking so the image
        energy never increases), renormalize over its support, and re-adjust
        the code with a few descent iterations before the next site.
        """
        frame = np.asarray(frame, dtype=np.float64)
        x = frame.ravel()
        if infer_iters is not None:
            hyper_infer = SparseHyper(alpha=hyper.alpha, max_iters=infer_iters,
                                      tolerance=hyper.tolerance)
        else:
            hyper_infer = hyper
        state = self.infer_image_code(frame, hyper_infer, group_cfg)
        z, energy = state.z, state.energy
        step = 1.0 / self._lipschitz()
        lr_e = lr if lr_enc is None else lr_enc
        pred = self.encode_image(frame) if train_encoder else None
        keys = site_keys if site_keys is not None else list(self.filters)
        r = x - self._A @ z
        for key in keys:
            unit_ids = self._filter_units[key]
            f = self.filters[key]
            active = [i for i in unit_ids if z[i] != 0.0]
            if active:
                grad = np.zeros_like(f.decode.ravel())
                for i in active:
                    grad += -2.0 * z[i] * r[self.units[i].flat_idx]
                old = f.decode.ravel().copy()
                t = lr
                for _ in range(20):
                    cand = old - t * grad
                    n = np.linalg.norm(cand)
                    cand = cand / n if n > 0 else old
                    delta_e = 0.0
                    for i in active:
                        idx = self.units[i].flat_idx
                        r_new = r[idx] + (old - cand) * z[i]
                        delta_e += float(r_new @ r_new - r[idx] @ r[idx])
                    if delta_e <= 1e-9:
                        break
                    t *= 0.5
                if delta_e <= 1e-9:
                    for i in active:
                        idx = self.units[i].flat_idx
                        r[idx] += (old - cand) * z[i]
                    f.decode = cand.reshape(f.decode.shape)
                    energy += delta_e
                    self._sync_units(unit_ids)
            if train_encoder:
                self._encoder_site_step(f, unit_ids, x, z, pred, lr_e)
            if code_iters > 0:
                z, energy = self._code_steps(x, z, energy, code_iters, step,
                                             hyper, group_cfg)
                r = x - self._A @ z
        if train_encoder:
            self._sync_units([i for key in keys for i in self._filter_units[key]])
        recon = x - self._A @ z
        return {"energy": energy, "recon_err": float(recon @ recon),
                "l1": float(np.sum(np.abs(z))), "iterations": state.iterations}

    def _encoder_site_step(self, f: UnitFilter, unit_ids, x, z, pred, lr_e) -> None:
        g_w = np.zeros_like(f.encode_w.ravel())
        g_gain = 0.0
        g_bias = 0.0
        for i in unit_ids:
            u = self.units[i]
            xi = x[u.flat_idx]
            y = float(f.encode_w.ravel() @ xi) + f.bias
            if self.flavor == TANH:
                nonlin = math.tanh(y)
                dy = 1.0 - nonlin**2
            else:
                t1, t2 = math.tanh(y + self.notch), math.tanh(y - self.notch)
                nonlin = t1 + t2
                dy = (1.0 - t1**2) + (1.0 - t2**2)
            p = f.gain * nonlin
            e = -2.0 * (z[i] - p)
            g_gain += e * nonlin
            gy = e * f.gain * dy
            g_bias += gy
            g_w += gy * xi
        f.encode_w = (f.encode_w.ravel() - lr_e * g_w).reshape(f.encode_w.shape)
        f.gain = max(f.gain - lr_e * g_gain, 0.0)
        f.bias = f.bias - lr_e * g_bias


def train_local(frames, net: LocalNet, hyper: SparseHyper, lr: float = 0.05,
                **kwargs) -> list[dict]:
    """Per-site training schedule over a sequence of frames."""
    return [net.train_frame(f, hyper, lr=lr, **kwargs) for f in frames]
