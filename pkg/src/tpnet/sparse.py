"""Patch-level sparse coding and predictive sparse decomposition.

Energies, ISTA-style inference with backtracking, dictionary learning with
unit-norm columns, and the tanh / double-tanh feed-forward encoders.
"""

from dataclasses import dataclass, field

import numpy as np

TANH = "tanh"
DOUBLE_TANH = "double_tanh"


@dataclass
class SparseHyper:
    alpha: float = 0.5
    max_iters: int = 100
    step_size: float | None = None  # None: 1 / Lipschitz estimate
    tolerance: float = 1e-6  # relative energy change

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")


@dataclass
class CodeState:
    z: np.ndarray
    energy: float
    iterations: int
    converged: bool
    energy_trace: np.ndarray | None = None


@dataclass
class Dictionary:
    """Linear decoder with unit-norm columns (basis vectors)."""

    atoms: np.ndarray  # n_x x n_z

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        if self.atoms.ndim != 2:
            raise ValueError("atoms must be a 2-D matrix")

    @property
    def n_x(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_z(self) -> int:
        return self.atoms.shape[1]

    def normalize(self) -> None:
        norms = np.linalg.norm(self.atoms, axis=0)
        norms[norms == 0] = 1.0
        self.atoms /= norms

    @classmethod
    def random(cls, n_x: int, n_z: int, rng: np.random.Generator) -> "Dictionary":
        d = cls(rng.standard_normal((n_x, n_z)))
        d.normalize()
        return d


@dataclass
class EncoderParams:
    """Feed-forward code predictor: gain * tanh(weights @ x + bias), or the
    double-tanh variant with a notch of half-width `notch` around zero."""

    weights: np.ndarray  # n_z x n_x
    gain: np.ndarray  # n_z, >= 0
    bias: np.ndarray  # n_z
    notch: float | np.ndarray = 0.5  # scalar by default, >= 0
    flavor: str = DOUBLE_TANH

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.gain = np.asarray(self.gain, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.flavor not in (TANH, DOUBLE_TANH):
            raise ValueError(f"unknown encoder flavor {self.flavor!r}")
        if np.any(self.gain < 0) or np.any(np.asarray(self.notch) < 0):
            raise ValueError("gain and notch must be nonnegative")

    @classmethod
    def from_dictionary(cls, dictionary: Dictionary, flavor: str = DOUBLE_TANH,
                        notch: float = 0.5) -> "EncoderParams":
        n_z = dictionary.n_z
        return cls(
            weights=dictionary.atoms.T.copy(),
            gain=np.ones(n_z),
            bias=np.zeros(n_z),
            notch=notch,
            flavor=flavor,
        )


@dataclass
class SparseModel:
    dictionary: Dictionary
    encoder: EncoderParams


@dataclass
class StepDiagnostics:
    recon_err: float
    pred_err: float
    l1: float
    energy: float


def _check_dims(x: np.ndarray, n: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != n:
        raise ValueError(f"{name} has leading dimension {x.shape[0]}, expected {n}")
    return x


def energy_sc(x: np.ndarray, z: np.ndarray, dictionary: Dictionary, alpha: float) -> float:
    """||x - W z||^2 + alpha |z|, summed over the batch if x is 2-D."""
    x = _check_dims(x, dictionary.n_x, "x")
    z = _check_dims(z, dictionary.n_z, "z")
    r = x - dictionary.atoms @ z
    return float(np.sum(r * r) + alpha * np.sum(np.abs(z)))


def encode(x: np.ndarray, enc: EncoderParams) -> np.ndarray:
    x = _check_dims(x, enc.weights.shape[1], "x")
    y = enc.weights @ x + (enc.bias if x.ndim == 1 else enc.bias[:, None])
    gain = enc.gain if x.ndim == 1 else enc.gain[:, None]
    if enc.flavor == TANH:
        return gain * np.tanh(y)
    u = enc.notch
    if x.ndim == 2 and np.ndim(u) == 1:
        u = np.asarray(u)[:, None]
    return gain * (np.tanh(y + u) + np.tanh(y - u))


def energy_psd(x: np.ndarray, z: np.ndarray, dictionary: Dictionary,
               enc: EncoderParams, alpha: float) -> float:
    """Reconstruction + code-prediction + sparsity terms."""
    pred = encode(x, enc)
    z = _check_dims(z, dictionary.n_z, "z")
    r = x - dictionary.atoms @ z
    e = z - pred
    return float(np.sum(r * r) + np.sum(e * e) + alpha * np.sum(np.abs(z)))


def soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _spectral_norm_sq(atoms: np.ndarray, iters: int = 30) -> float:
    """Largest eigenvalue of W^T W by power iteration (deterministic start)."""
    v = np.ones(atoms.shape[1]) / np.sqrt(atoms.shape[1])
    for _ in range(iters):
        w = atoms.T @ (atoms @ v)
        n = np.linalg.norm(w)
        if n == 0:
            return 1.0
        v = w / n
    return float(v @ (atoms.T @ (atoms @ v)))


def _ista(x, dictionary, alpha, smooth_grad_extra, energy_fn, z0, hyper,
          extra_lipschitz=0.0, nonneg=False, record_trace=False) -> CodeState:
    """Proximal gradient descent on smooth-term + alpha*L1.

    smooth_grad_extra(z) adds any smooth gradient beyond the reconstruction
    term; extra_lipschitz bounds its curvature. Backtracking halves the step
    whenever a step fails to decrease the energy.
    """
    atoms = dictionary.atoms
    lip = 2.0 * _spectral_norm_sq(atoms) + extra_lipschitz
    step = hyper.step_size if hyper.step_size is not None else 1.0 / max(lip, 1e-12)
    z = z0.astype(np.float64).copy()
    energy = energy_fn(z)
    trace = [energy] if record_trace else None
    iterations = 0
    converged = False
    for iterations in range(1, hyper.max_iters + 1):
        grad = 2.0 * (atoms.T @ (atoms @ z - x))
        if smooth_grad_extra is not None:
            grad = grad + smooth_grad_extra(z)
        t = step
        for _ in range(60):
            z_new = soft_threshold(z - t * grad, t * alpha)
            if nonneg:
                z_new = np.maximum(z_new, 0.0)
            e_new = energy_fn(z_new)
            if e_new <= energy + 1e-12:
                break
            t *= 0.5
        if e_new > energy:
            z_new, e_new = z, energy  # no admissible step: stay put
        if record_trace:
            trace.append(e_new)
        delta = energy - e_new
        z, energy = z_new, e_new
        if delta <= hyper.tolerance * max(abs(energy), 1.0):
            converged = True
            break
    return CodeState(
        z=z,
        energy=energy,
        iterations=iterations,
        converged=converged,
        energy_trace=np.array(trace) if record_trace else None,
    )


def infer_code_sc(x: np.ndarray, dictionary: Dictionary, hyper: SparseHyper,
                  z0: np.ndarray | None = None, record_trace: bool = False) -> CodeState:
    """Minimize the sparse-coding energy by ISTA with backtracking."""
    x = _check_dims(x, dictionary.n_x, "x")
    if z0 is None:
        z0 = np.zeros(dictionary.n_z if x.ndim == 1 else (dictionary.n_z, x.shape[1]))
    return _ista(
        x, dictionary, hyper.alpha, None,
        lambda z: energy_sc(x, z, dictionary, hyper.alpha),
        z0, hyper, record_trace=record_trace,
    )


def infer_code_psd(x: np.ndarray, dictionary: Dictionary, enc: EncoderParams,
                   hyper: SparseHyper, record_trace: bool = False) -> CodeState:
    """Minimize the PSD energy starting from the encoder prediction."""
    x = _check_dims(x, dictionary.n_x, "x")
    pred = encode(x, enc)

    def extra(z):
        return 2.0 * (z - pred)

    return _ista(
        x, dictionary, hyper.alpha, extra,
        lambda z: energy_psd(x, z, dictionary, enc, hyper.alpha),
        pred, hyper, extra_lipschitz=2.0, record_trace=record_trace,
    )


def dictionary_grad(x: np.ndarray, z: np.ndarray, dictionary: Dictionary) -> np.ndarray:
    """Gradient of ||x - W z||^2 w.r.t. W (mean over batch if 2-D)."""
    r = x - dictionary.atoms @ z
    if x.ndim == 1:
        return -2.0 * np.outer(r, z)
    return -2.0 * (r @ z.T) / x.shape[1]


def encoder_grads(x: np.ndarray, target: np.ndarray, enc: EncoderParams) -> dict:
    """Gradients of ||target - Enc(x)||^2 w.r.t. encoder parameters.

    Averages over the batch when x is 2-D.
    """
    single = x.ndim == 1
    xs = x[:, None] if single else x
    ts = target[:, None] if single else target
    batch = xs.shape[1]
    y = enc.weights @ xs + enc.bias[:, None]
    if enc.flavor == TANH:
        th = np.tanh(y)
        nonlin = th
        dnonlin_dy = 1.0 - th**2
        dnonlin_du = np.zeros_like(y)
    else:
        u = np.asarray(enc.notch)
        uu = u[:, None] if u.ndim == 1 else u
        t1 = np.tanh(y + uu)
        t2 = np.tanh(y - uu)
        nonlin = t1 + t2
        dnonlin_dy = (1.0 - t1**2) + (1.0 - t2**2)
        dnonlin_du = (1.0 - t1**2) - (1.0 - t2**2)
    pred = enc.gain[:, None] * nonlin
    e = -2.0 * (ts - pred) / batch  # dLoss/dpred
    g_gain = np.sum(e * nonlin, axis=1)
    gy = e * enc.gain[:, None] * dnonlin_dy
    g_bias = np.sum(gy, axis=1)
    g_weights = gy @ xs.T
    gu_per_unit = np.sum(e * enc.gain[:, None] * dnonlin_du, axis=1)
    g_notch = gu_per_unit if np.ndim(enc.notch) == 1 else float(np.sum(gu_per_unit))
    loss = float(np.sum((ts - pred) ** 2) / batch)
    return {
        "weights": g_weights,
        "gain": g_gain,
        "bias": g_bias,
        "notch": g_notch,
        "loss": loss,
    }


def train_dictionary_sc(x: np.ndarray, dictionary: Dictionary, hyper: SparseHyper,
                        lr: float = 0.05) -> StepDiagnostics:
    """One stochastic gradient step of sparse-coding dictionary learning.

    x may be a single patch or a (n_x, batch) matrix. Updates in place and
    renormalizes the columns.
    """
    x = _check_dims(x, dictionary.n_x, "x")
    state = infer_code_sc(x, dictionary, hyper)
    z = state.z
    dictionary.atoms -= lr * dictionary_grad(x, z, dictionary)
    dictionary.normalize()
    r = x - dictionary.atoms @ z
    batch = 1 if x.ndim == 1 else x.shape[1]
    recon = float(np.sum(r * r)) / batch
    l1 = float(np.sum(np.abs(z))) / batch
    return StepDiagnostics(recon_err=recon, pred_err=0.0, l1=l1,
                           energy=recon + hyper.alpha * l1)


def train_step_psd(x: np.ndarray, model: SparseModel, hyper: SparseHyper,
                   lr: float = 0.05, lr_enc: float | None = None) -> StepDiagnostics:
    """One PSD training step: infer the code, step all parameters, renormalize."""
    x = _check_dims(x, model.dictionary.n_x, "x")
    state = infer_code_psd(x, model.dictionary, model.encoder, hyper)
    z = state.z
    model.dictionary.atoms -= lr * dictionary_grad(x, z, model.dictionary)
    model.dictionary.normalize()
    enc = model.encoder
    g = encoder_grads(x, z, enc)
    lr_e = lr if lr_enc is None else lr_enc
    enc.weights -= lr_e * g["weights"]
    enc.bias -= lr_e * g["bias"]
    enc.gain = np.maximum(enc.gain - lr_e * g["gain"], 0.0)
    if np.ndim(enc.notch) == 1:
        enc.notch = np.maximum(enc.notch - lr_e * g["notch"], 0.0)
    else:
        enc.notch = max(float(enc.notch) - lr_e * g["notch"], 0.0)
    r = x - model.dictionary.atoms @ z
    batch = 1 if x.ndim == 1 else x.shape[1]
    recon = float(np.sum(r * r)) / batch
    pred_err = g["loss"]
    l1 = float(np.sum(np.abs(z))) / batch
    return StepDiagnostics(recon_err=recon, pred_err=pred_err, l1=l1,
                           energy=recon + pred_err + hyper.alpha * l1)
