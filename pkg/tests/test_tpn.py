import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_diff, rel_err
from tpnet.sparse import Dictionary, EncoderParams
from tpnet.tpn import (TpnCode, TpnHyper, TpnModel, check_window, tpn_encode_z1,
                       tpn_encode_z2, tpn_energy, tpn_energy_grads, tpn_infer,
                       tpn_reconstruct, tpn_train_step)


def make_model(rng, n_s=9, n_loc=5, n_inv=4, n_tau=3):
    return TpnModel.random(n_s, n_loc, n_inv, rng, n_tau=n_tau)


def smooth_point(rng, model):
    """Codes and a window keeping every rectifier strictly active.

    Flips the dictionaries nonnegative first; with sign-mixed atoms the
    all-rectifiers-active event is too rare to sample."""
    for d in (model.loc_dict, model.inv_dict):
        d.atoms = np.abs(d.atoms)
        d.normalize()
    while True:
        loc = rng.uniform(0.3, 1.0, (model.n_tau, model.loc_dict.n_z))
        inv = rng.uniform(0.3, 1.0, model.inv_dict.n_z)
        a = model.loc_dict.atoms @ loc.T
        b = model.inv_dict.atoms @ inv
        if a.min() > 0.05 and b.min() > 0.05:
            window = rng.uniform(0.0, 1.0, (model.n_tau, model.n_s))
            return TpnCode(loc=loc, inv=inv), window


def test_reconstruction_is_sqrt_of_product(rng):
    m = make_model(rng)
    code, _ = smooth_point(rng, m)
    r = tpn_reconstruct(code.loc[0], code.inv, m)
    a = np.maximum(m.loc_dict.atoms @ code.loc[0], 0.0)
    b = np.maximum(m.inv_dict.atoms @ code.inv, 0.0)
    assert np.allclose(r * r, a * b)
    assert np.all(r >= 0)


def test_energy_manual_value():
    m = TpnModel(loc_dict=Dictionary(np.eye(2)), inv_dict=Dictionary(np.eye(2)),
                 enc_loc=None, enc_inv=None, n_tau=1, alpha_loc=0.1,
                 alpha_inv=0.2)
    window = np.array([[1.0, 0.0]])
    code = TpnCode(loc=np.array([[4.0, 0.0]]), inv=np.array([1.0, 0.0]))
    # recon = sqrt(4 * 1) = 2 on the first pixel: (1-2)^2 + 0.1*4 + 0.2*1
    assert tpn_energy(window, code, m) == pytest.approx(1.0 + 0.4 + 0.2)


def test_code_gradients_match_fd(rng):
    m = make_model(rng)
    code, window = smooth_point(rng, m)
    g = tpn_energy_grads(window, code, m)

    def e_loc(loc):
        return tpn_energy(window, TpnCode(loc=loc, inv=code.inv), m)

    def e_inv(inv):
        return tpn_energy(window, TpnCode(loc=code.loc, inv=inv), m)

    assert rel_err(g["loc"], central_diff(e_loc, code.loc)) < 1e-4
    assert rel_err(g["inv"], central_diff(e_inv, code.inv)) < 1e-4


def test_decoder_gradients_match_fd(rng):
    m = make_model(rng, n_s=6, n_loc=4, n_inv=3, n_tau=2)
    code, window = smooth_point(rng, m)
    g = tpn_energy_grads(window, code, m)

    def e_w1(atoms):
        m.loc_dict.atoms, old = atoms, m.loc_dict.atoms
        try:
            return tpn_energy(window, code, m)
        finally:
            m.loc_dict.atoms = old

    def e_w2(atoms):
        m.inv_dict.atoms, old = atoms, m.inv_dict.atoms
        try:
            return tpn_energy(window, code, m)
        finally:
            m.inv_dict.atoms = old

    assert rel_err(g["loc_dict"], central_diff(e_w1, m.loc_dict.atoms)) < 1e-4
    assert rel_err(g["inv_dict"], central_diff(e_w2, m.inv_dict.atoms)) < 1e-4


def test_inference_monotone_and_nonnegative(rng):
    m = make_model(rng)
    window = rng.uniform(0, 1, (3, 9))
    code = tpn_infer(window, m, TpnHyper(max_iters=100), record_trace=True)
    assert np.all(np.diff(code.energy_trace) <= 1e-10)
    assert np.all(code.loc >= 0)
    assert np.all(code.inv >= 0)
    assert code.energy == pytest.approx(tpn_energy(window, code, m))


def test_inference_escapes_zero_code(rng):
    # the rectified product has zero gradient at the origin; automatic
    # initialization must not get trapped there
    m = make_model(rng)
    window = rng.uniform(0.2, 1.0, (3, 9))
    code = tpn_infer(window, m, TpnHyper(max_iters=300))
    zero = TpnCode(loc=np.zeros_like(code.loc), inv=np.zeros_like(code.inv))
    assert code.energy < tpn_energy(window, zero, m)


def test_inference_matches_grid_search_scalar_model(rng):
    # n_s = n_loc = n_inv = 1 with identity decoders: the energy is a
    # function of two scalars and can be minimized by brute force
    d = Dictionary(np.ones((1, 1)))
    m = TpnModel(loc_dict=d, inv_dict=Dictionary(np.ones((1, 1))),
                 enc_loc=EncoderParams.from_dictionary(d),
                 enc_inv=EncoderParams.from_dictionary(d),
                 n_tau=1, alpha_loc=0.05, alpha_inv=0.05)
    window = np.array([[0.8]])
    grid = np.linspace(0, 2, 401)
    u, v = np.meshgrid(grid, grid)
    surface = (0.8 - np.sqrt(u * v)) ** 2 + 0.05 * u + 0.05 * v
    best_e = float(surface.min())
    # spot-check the closed-form surface against the module energy
    code_pt = TpnCode(loc=np.array([[grid[123]]]), inv=np.array([grid[321]]))
    assert tpn_energy(window, code_pt, m) == pytest.approx(surface[321, 123])
    code = tpn_infer(window, m, TpnHyper(max_iters=500, tolerance=1e-12))
    assert code.energy <= best_e + 1e-6


def test_scale_exchange_between_codes_is_energy_neutral(rng):
    # moving scale from z1 to z2 leaves the reconstruction unchanged; only
    # the L1 terms move
    m = make_model(rng, n_tau=1)
    code, window = smooth_point(rng, m)
    scaled = TpnCode(loc=code.loc * 4.0, inv=code.inv / 4.0)
    r0 = tpn_reconstruct(code.loc[0], code.inv, m)
    r1 = tpn_reconstruct(scaled.loc[0], scaled.inv, m)
    assert np.allclose(r0, r1)


def test_encoders_clamped_nonnegative(rng):
    m = make_model(rng)
    window = rng.uniform(0, 1, (3, 9))
    assert np.all(tpn_encode_z1(window[0], m) >= 0)
    assert np.all(tpn_encode_z2(window, m) >= 0)


def test_train_step_preserves_unit_norms_and_descends(rng):
    m = make_model(rng, n_s=16, n_loc=6, n_inv=6)
    frames = rng.uniform(0, 1, (40, 3, 16))
    energies = []
    for w in frames:
        d = tpn_train_step(w, m, TpnHyper(max_iters=60), lr=0.01)
        energies.append(d["energy"])
        assert np.abs(np.linalg.norm(m.loc_dict.atoms, axis=0) - 1).max() < 1e-12
        assert np.abs(np.linalg.norm(m.inv_dict.atoms, axis=0) - 1).max() < 1e-12
        assert np.all(m.enc_loc.gain >= 0) and np.all(m.enc_inv.gain >= 0)
    assert np.mean(energies[-10:]) < np.mean(energies[:10])


def test_window_validation(rng):
    m = make_model(rng)
    with pytest.raises(ValueError):
        check_window(np.zeros((2, 9)), m)  # wrong n_tau
    with pytest.raises(ValueError):
        check_window(np.zeros((3, 7)), m)  # wrong n_s
    bad = np.zeros((3, 9))
    bad[0, 0] = -1.0
    with pytest.raises(ValueError):
        check_window(bad, m)


def test_model_validation(rng):
    with pytest.raises(ValueError):
        TpnModel.random(4, 2, 2, rng, alpha=0.0)
    with pytest.raises(ValueError):
        TpnModel.random(4, 2, 2, rng, n_tau=0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_inference_energy_finite_and_monotone(seed):
    rng = np.random.default_rng(seed)
    m = TpnModel.random(6, 4, 3, rng, n_tau=2)
    window = rng.uniform(0, 1, (2, 6))
    code = tpn_infer(window, m, TpnHyper(max_iters=40), record_trace=True)
    assert np.isfinite(code.energy)
    assert np.all(np.diff(code.energy_trace) <= 1e-10)
