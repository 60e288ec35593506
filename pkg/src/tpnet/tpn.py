"""Temporal product network: factors a short window of nonnegative feature
frames into one invariant content code shared across the window and one
location code per frame. The decoder reconstructs each frame as the
elementwise square root of the product of the two linear decodings.
"""

from dataclasses import dataclass

import numpy as np

from .sparse import CodeState, Dictionary, EncoderParams, DOUBLE_TANH

EPS_SQRT = 1e-8  # smoothing in sqrt-gradient denominators


@dataclass
class TpnModel:
    loc_dict: Dictionary  # n_s x n_loc, one location code per frame
    inv_dict: Dictionary  # n_s x n_inv, one invariant code per window
    enc_loc: EncoderParams
    enc_inv: EncoderParams
    n_tau: int = 3
    alpha_loc: float = 0.02
    alpha_inv: float = 0.02

    def __post_init__(self):
        if self.alpha_loc <= 0 or self.alpha_inv <= 0:
            raise ValueError("sparsity weights must be positive")
        if self.n_tau < 1:
            raise ValueError("n_tau must be at least 1")

    @property
    def n_s(self) -> int:
        return self.loc_dict.n_x

    @classmethod
    def random(cls, n_s: int, n_loc: int, n_inv: int, rng: np.random.Generator,
               n_tau: int = 3, alpha: float = 0.02) -> "TpnModel":
        loc = Dictionary.random(n_s, n_loc, rng)
        inv = Dictionary.random(n_s, n_inv, rng)
        return cls(
            loc_dict=loc,
            inv_dict=inv,
            enc_loc=EncoderParams.from_dictionary(loc, flavor=DOUBLE_TANH),
            enc_inv=EncoderParams.from_dictionary(inv, flavor=DOUBLE_TANH),
            n_tau=n_tau,
            alpha_loc=alpha,
            alpha_inv=alpha,
        )


@dataclass
class TpnCode:
    loc: np.ndarray  # (n_tau, n_loc), nonnegative
    inv: np.ndarray  # (n_inv,), nonnegative
    energy: float = 0.0
    iterations: int = 0
    converged: bool = True
    energy_trace: np.ndarray | None = None


def check_window(window: np.ndarray, model: TpnModel) -> np.ndarray:
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 1:
        window = window[None, :]
    if window.shape != (model.n_tau, model.n_s):
        raise ValueError(
            f"window shape {window.shape} does not match (n_tau, n_s) = "
            f"({model.n_tau}, {model.n_s})")
    if np.any(window < 0):
        raise ValueError("window entries must be nonnegative")
    return window


def tpn_reconstruct(z_loc: np.ndarray, z_inv: np.ndarray, model: TpnModel) -> np.ndarray:
    """sqrt of the rectified elementwise product of the two decodings."""
    a = np.maximum(model.loc_dict.atoms @ z_loc, 0.0)
    b = np.maximum(model.inv_dict.atoms @ z_inv, 0.0)
    return np.sqrt(a * b)


def tpn_energy(window: np.ndarray, code: TpnCode, model: TpnModel) -> float:
    window = check_window(window, model)
    total = 0.0
    for tau in range(model.n_tau):
        r = window[tau] - tpn_reconstruct(code.loc[tau], code.inv, model)
        total += float(r @ r)
    total += model.alpha_loc * float(np.sum(np.abs(code.loc)))
    total += model.alpha_inv * float(np.sum(np.abs(code.inv)))
    return total


def tpn_energy_grads(window: np.ndarray, code: TpnCode, model: TpnModel) -> dict:
    """Gradients of the window energy w.r.t. codes and both decoder matrices.

    L1 terms use the nonnegative-orthant gradient (constant alpha); sqrt
    denominators are smoothed by EPS_SQRT.
    """
    window = check_window(window, model)
    w1, w2 = model.loc_dict.atoms, model.inv_dict.atoms
    g_loc = np.zeros_like(code.loc)
    g_w1 = np.zeros_like(w1)
    g_w2 = np.zeros_like(w2)
    gb_sum = np.zeros(w2.shape[0])
    b_lin = w2 @ code.inv
    rb = np.maximum(b_lin, 0.0)
    for tau in range(model.n_tau):
        a_lin = w1 @ code.loc[tau]
        ra = np.maximum(a_lin, 0.0)
        recon = np.sqrt(ra * rb)
        dr = -2.0 * (window[tau] - recon)
        denom = 2.0 * np.sqrt(ra * rb + EPS_SQRT)
        ga = dr * (rb / denom) * (a_lin > 0)
        gb = dr * (ra / denom) * (b_lin > 0)
        g_loc[tau] = w1.T @ ga + model.alpha_loc
        g_w1 += np.outer(ga, code.loc[tau])
        gb_sum += gb
    g_inv = w2.T @ gb_sum + model.alpha_inv
    g_w2 = np.outer(gb_sum, code.inv)
    return {"loc": g_loc, "inv": g_inv, "loc_dict": g_w1, "inv_dict": g_w2}


def tpn_encode_z1(s_frame: np.ndarray, model: TpnModel) -> np.ndarray:
    """Per-frame location-code prediction, clamped at 0."""
    from .sparse import encode

    return np.maximum(encode(np.asarray(s_frame, dtype=np.float64), model.enc_loc), 0.0)


def tpn_encode_z2(window: np.ndarray, model: TpnModel) -> np.ndarray:
    """Invariant-code prediction: sum over the window frames, clamped at 0."""
    from .sparse import encode

    window = check_window(window, model)
    pred = encode(window.T, model.enc_inv)  # (n_inv, n_tau)
    return np.maximum(pred.sum(axis=1), 0.0)


@dataclass
class TpnHyper:
    max_iters: int = 200
    tolerance: float = 1e-8
    step_size: float = 0.05


def tpn_infer(window: np.ndarray, model: TpnModel, hyper: TpnHyper = TpnHyper(),
              init: TpnCode | None = None, record_trace: bool = False) -> TpnCode:
    """Projected gradient descent on the window energy with backtracking;
    codes stay elementwise nonnegative."""
    window = check_window(window, model)
    if init is None:
        loc = np.stack([tpn_encode_z1(window[tau], model) for tau in range(model.n_tau)])
        inv = tpn_encode_z2(window, model)
        # zero is a fixed point of the projected gradient (the rectified
        # product blocks all reconstruction gradient), so floor the starting
        # code at a small positive value
        floor = 0.1
        code = TpnCode(loc=np.maximum(loc, floor), inv=np.maximum(inv, floor))
    else:
        code = TpnCode(loc=np.maximum(init.loc, 0.0).copy(),
                       inv=np.maximum(init.inv, 0.0).copy())
    energy = tpn_energy(window, code, model)
    trace = [energy] if record_trace else None
    step = hyper.step_size
    converged = False
    iterations = 0
    for iterations in range(1, hyper.max_iters + 1):
        g = tpn_energy_grads(window, code, model)
        t = step
        accepted = False
        for _ in range(60):
            trial = TpnCode(loc=np.maximum(code.loc - t * g["loc"], 0.0),
                            inv=np.maximum(code.inv - t * g["inv"], 0.0))
            e_new = tpn_energy(window, trial, model)
            if e_new <= energy + 1e-12:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            e_new = energy
        else:
            code = trial
            step = min(t * 1.5, 10.0 * hyper.step_size)
        if record_trace:
            trace.append(e_new)
        delta = energy - e_new
        energy = e_new
        if delta <= hyper.tolerance * max(abs(energy), 1.0):
            converged = True
            break
    code.energy = energy
    code.iterations = iterations
    code.converged = converged
    code.energy_trace = np.array(trace) if record_trace else None
    return code


def _encoder_step(enc: EncoderParams, frames: np.ndarray, target_err: np.ndarray,
                  lr: float) -> None:
    """Apply one gradient step to an encoder whose prediction is the sum of
    its raw outputs over `frames` (rows), given dLoss/dprediction."""
    g_w = np.zeros_like(enc.weights)
    g_b = np.zeros_like(enc.bias)
    g_d = np.zeros_like(enc.gain)
    g_u = 0.0
    for s in frames:
        y = enc.weights @ s + enc.bias
        u = float(enc.notch)
        t1, t2 = np.tanh(y + u), np.tanh(y - u)
        nonlin = t1 + t2
        dy = (1.0 - t1**2) + (1.0 - t2**2)
        du = (1.0 - t1**2) - (1.0 - t2**2)
        g_d += target_err * nonlin
        gy = target_err * enc.gain * dy
        g_b += gy
        g_w += np.outer(gy, s)
        g_u += float(np.sum(target_err * enc.gain * du))
    enc.weights -= lr * g_w
    enc.bias -= lr * g_b
    enc.gain = np.maximum(enc.gain - lr * g_d, 0.0)
    enc.notch = max(float(enc.notch) - lr * g_u, 0.0)


def tpn_train_step(window: np.ndarray, model: TpnModel,
                   hyper: TpnHyper = TpnHyper(), lr: float = 0.02,
                   lr_enc: float | None = None) -> dict:
    """Infer codes, step decoders toward lower window energy, renormalize
    their columns, and regress the encoders onto the inferred codes."""
    window = check_window(window, model)
    code = tpn_infer(window, model, hyper)
    g = tpn_energy_grads(window, code, model)
    model.loc_dict.atoms -= lr * g["loc_dict"]
    model.inv_dict.atoms -= lr * g["inv_dict"]
    model.loc_dict.normalize()
    model.inv_dict.normalize()

    lr_e = lr if lr_enc is None else lr_enc
    # location encoder: one raw prediction per frame
    from .sparse import encode

    pred_loc = encode(window.T, model.enc_loc)  # (n_loc, n_tau)
    pred_err_loc = 0.0
    for tau in range(model.n_tau):
        err = -2.0 * (code.loc[tau] - pred_loc[:, tau]) / model.n_tau
        pred_err_loc += float(np.sum((code.loc[tau] - pred_loc[:, tau]) ** 2))
        _encoder_step(model.enc_loc, window[tau : tau + 1], err, lr_e)
    # invariant encoder: prediction is the sum over frames
    pred_inv = encode(window.T, model.enc_inv).sum(axis=1)
    err_inv = -2.0 * (code.inv - pred_inv)
    _encoder_step(model.enc_inv, window, err_inv, lr_e)

    recon_err = 0.0
    for tau in range(model.n_tau):
        r = window[tau] - tpn_reconstruct(code.loc[tau], code.inv, model)
        recon_err += float(r @ r)
    return {
        "energy": code.energy,
        "recon_err": recon_err,
        "pred_err_loc": pred_err_loc / model.n_tau,
        "pred_err_inv": float(np.sum((code.inv - pred_inv) ** 2)),
        "l1_loc": float(np.sum(code.loc)),
        "l1_inv": float(np.sum(code.inv)),
        "iterations": code.iterations,
    }
