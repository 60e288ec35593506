"""Serialization of model objects to and from the tensor container."""

from fractions import Fraction

import numpy as np

from .container import ContainerError, load_file, save_file
from .localnet import LocalNet, LocalTopology
from .sparse import Dictionary, EncoderParams, SparseModel
from .tpn import TpnModel


def _meta_lines(pairs: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in pairs.items())


def _parse_meta(metadata: str) -> dict:
    out = {}
    for line in metadata.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        k, v = line.split("=", 1)
        # structured fields are written first; appended config text must not
        # clobber them when key names collide
        out.setdefault(k.strip(), v.strip())
    return out


def _encoder_tensors(prefix: str, enc: EncoderParams) -> dict:
    return {
        f"{prefix}.weights": enc.weights,
        f"{prefix}.gain": enc.gain,
        f"{prefix}.bias": enc.bias,
        f"{prefix}.notch": np.atleast_1d(np.asarray(enc.notch, dtype=np.float64)),
    }


def _encoder_from(prefix: str, tensors: dict, flavor: str) -> EncoderParams:
    notch = tensors[f"{prefix}.notch"].astype(np.float64)
    return EncoderParams(
        weights=tensors[f"{prefix}.weights"].astype(np.float64),
        gain=tensors[f"{prefix}.gain"].astype(np.float64),
        bias=tensors[f"{prefix}.bias"].astype(np.float64),
        notch=float(notch[0]) if notch.size == 1 else notch,
        flavor=flavor,
    )


def save_sparse_model(path, model: SparseModel, config_text: str = "") -> None:
    tensors = {"dictionary": model.dictionary.atoms}
    tensors.update(_encoder_tensors("encoder", model.encoder))
    meta = _meta_lines({"kind": "sparse-model", "flavor": model.encoder.flavor})
    save_file(path, tensors, meta + config_text)


def save_dictionary(path, dictionary: Dictionary, config_text: str = "") -> None:
    meta = _meta_lines({"kind": "dictionary"})
    save_file(path, {"dictionary": dictionary.atoms}, meta + config_text)


def save_tpn_model(path, model: TpnModel, config_text: str = "") -> None:
    tensors = {"loc_dict": model.loc_dict.atoms, "inv_dict": model.inv_dict.atoms}
    tensors.update(_encoder_tensors("enc_loc", model.enc_loc))
    tensors.update(_encoder_tensors("enc_inv", model.enc_inv))
    meta = _meta_lines({
        "kind": "tpn",
        "n_tau": model.n_tau,
        "alpha_loc": repr(model.alpha_loc),
        "alpha_inv": repr(model.alpha_inv),
        "flavor": model.enc_loc.flavor,
    })
    save_file(path, tensors, meta + config_text)


def save_local_net(path, net: LocalNet, config_text: str = "") -> None:
    topo = net.topo
    meta = _meta_lines({
        "kind": "local-net",
        "image_size": f"{topo.image_size[0]},{topo.image_size[1]}",
        "neighborhood": f"{topo.neighborhood[0]},{topo.neighborhood[1]}",
        "density": f"{topo.density[0]},{topo.density[1]}",
        "periodicity": ("none" if topo.periodicity is None
                        else f"{topo.periodicity[0]},{topo.periodicity[1]}"),
        "flavor": net.flavor,
        "notch": repr(net.notch),
    })
    tensors = {}
    for key, f in net.filters.items():
        name = f"{key[0]}_{key[1]}_{key[2]}"
        tensors[f"{name}.decode"] = f.decode
        tensors[f"{name}.encode"] = f.encode_w
        tensors[f"{name}.gain_bias"] = np.array([f.gain, f.bias])
    save_file(path, tensors, meta + config_text)


def load_model(path):
    """Load any saved model; returns (kind, model, metadata dict)."""
    tensors, metadata = load_file(path)
    meta = _parse_meta(metadata)
    kind = meta.get("kind")
    if kind == "dictionary":
        return kind, Dictionary(tensors["dictionary"].astype(np.float64)), meta
    if kind == "sparse-model":
        model = SparseModel(
            dictionary=Dictionary(tensors["dictionary"].astype(np.float64)),
            encoder=_encoder_from("encoder", tensors, meta["flavor"]),
        )
        return kind, model, meta
    if kind == "tpn":
        model = TpnModel(
            loc_dict=Dictionary(tensors["loc_dict"].astype(np.float64)),
            inv_dict=Dictionary(tensors["inv_dict"].astype(np.float64)),
            enc_loc=_encoder_from("enc_loc", tensors, meta["flavor"]),
            enc_inv=_encoder_from("enc_inv", tensors, meta["flavor"]),
            n_tau=int(meta["n_tau"]),
            alpha_loc=float(meta["alpha_loc"]),
            alpha_inv=float(meta["alpha_inv"]),
        )
        return kind, model, meta
    if kind == "local-net":
        topo = LocalTopology(
            image_size=tuple(int(v) for v in meta["image_size"].split(",")),
            neighborhood=tuple(int(v) for v in meta["neighborhood"].split(",")),
            density=tuple(Fraction(v) for v in meta["density"].split(",")),
            periodicity=(None if meta["periodicity"] == "none" else
                         tuple(int(v) for v in meta["periodicity"].split(","))),
        )
        net = LocalNet(topo, flavor=meta["flavor"], notch=float(meta["notch"]))
        for key, f in net.filters.items():
            name = f"{key[0]}_{key[1]}_{key[2]}"
            f.decode = tensors[f"{name}.decode"].astype(np.float64)
            f.encode_w = tensors[f"{name}.encode"].astype(np.float64)
            gb = tensors[f"{name}.gain_bias"].astype(np.float64)
            f.gain, f.bias = float(gb[0]), float(gb[1])
        net.sync()
        return kind, net, meta
    raise ContainerError(f"unknown model kind {kind!r}")
