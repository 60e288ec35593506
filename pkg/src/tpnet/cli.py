"""Command-line entry point tying the stages into reproducible experiments.

Usage: tpnet --config cfg.txt --out outdir [--seed N] [--threads N]
             [--deterministic]
"""

import argparse
import csv
import math
import os
import sys
from fractions import Fraction

import numpy as np

from . import analysis, pgm, stimuli
from .config import ConfigError, ExperimentConfig, load_config
from .container import save_file, load_file
from .groupsparse import GroupSparsityConfig
from .localnet import LocalNet, LocalTopology
from .model_io import (load_model, save_dictionary, save_local_net,
                       save_sparse_model, save_tpn_model)
from .preprocess import PreprocessConfig, preprocess
from .sparse import (Dictionary, EncoderParams, SparseHyper, SparseModel,
                     train_dictionary_sc, train_step_psd)
from .tpn import TpnHyper, TpnModel, tpn_infer, tpn_train_step


class StageError(RuntimeError):
    pass


class RunContext:
    """Tracks artifacts so a failed run leaves nothing behind."""

    def __init__(self, out_dir: str, cfg: ExperimentConfig, threads: int,
                 deterministic: bool):
        self.out_dir = out_dir
        self.cfg = cfg
        self.threads = threads
        self.deterministic = deterministic
        self.created: list[str] = []
        self.made_dir = not os.path.isdir(out_dir)
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        p = os.path.join(self.out_dir, name)
        self.created.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.created:
            if os.path.isfile(p):
                os.remove(p)
        if self.made_dir and os.path.isdir(self.out_dir) and not os.listdir(self.out_dir):
            os.rmdir(self.out_dir)


def _load_frames(path: str) -> list[np.ndarray]:
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path) if n.endswith(".pgm"))
        if not names:
            raise StageError(f"no .pgm frames in {path}")
        return [pgm.read_pgm(os.path.join(path, n)) for n in names]
    if not os.path.isfile(path):
        raise StageError(f"input not found: {path}")
    return [pgm.read_pgm(path)]


def _rescaled(frame: np.ndarray) -> np.ndarray:
    lo, hi = frame.min(), frame.max()
    return (frame - lo) / (hi - lo) if hi > lo else np.zeros_like(frame)


def _random_patches(frames, patch: int, count: int, rng) -> np.ndarray:
    """(patch*patch, count) matrix of patches drawn uniformly over frames."""
    cols = np.empty((patch * patch, count))
    for i in range(count):
        f = frames[int(rng.integers(0, len(frames)))]
        h, w = f.shape
        if h < patch or w < patch:
            raise StageError(f"frame {f.shape} smaller than patch size {patch}")
        y = int(rng.integers(0, h - patch + 1))
        x = int(rng.integers(0, w - patch + 1))
        cols[:, i] = f[y : y + patch, x : x + patch].ravel()
    return cols


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


# -- stages -------------------------------------------------------------------

def stage_gen(ctx: RunContext) -> None:
    cfg = ctx.cfg
    kind = cfg.get("kind")
    manifest = []
    if kind == "moving_gaussian":
        size = cfg.get_int("size")
        frames = stimuli.moving_gaussian(cfg.get_int("frames"), (size, size),
                                         cfg.get_float("width"), cfg.seed)
        for i, frame in enumerate(frames):
            pgm.write_pgm(ctx.path(f"frame_{i:04d}.pgm"), frame)
            manifest.append(f"{i} kind=moving_gaussian size={size} "
                            f"width={cfg.get('width')}")
    elif kind == "shifting_window":
        if not cfg.get("input"):
            raise StageError("shifting_window requires input=IMAGE.pgm")
        image = _load_frames(cfg.get("input"))[0]
        win = cfg.get_int("window")
        frames = stimuli.shifting_window(image, (win, win), cfg.get_int("frames"),
                                         cfg.seed)
        for i, frame in enumerate(frames):
            pgm.write_pgm(ctx.path(f"frame_{i:04d}.pgm"), frame)
            manifest.append(f"{i} kind=shifting_window window={win}")
    elif kind == "edge":
        frame = stimuli.edge_stimulus(cfg.get_float("orientation"),
                                      cfg.get_float("position"),
                                      cfg.get_int("size"),
                                      cfg.get_float("softness"))
        pgm.write_pgm(ctx.path("frame_0000.pgm"), _rescaled(frame))
        manifest.append(f"0 kind=edge orientation={cfg.get('orientation')} "
                        f"position={cfg.get('position')}")
    elif kind == "edge_scene":
        scene = stimuli.random_edge_scene(cfg.get_int("scene_size"),
                                          cfg.get_int("n_edges"), cfg.seed)
        pgm.write_pgm(ctx.path("scene.pgm"), _rescaled(scene))
        manifest.append(f"0 kind=edge_scene size={cfg.get('scene_size')}")
    else:
        raise StageError(f"unknown gen kind {kind!r}")
    with open(ctx.path("manifest.txt"), "w") as f:
        f.write("\n".join(manifest) + "\n")


def stage_preprocess(ctx: RunContext) -> None:
    cfg = ctx.cfg
    frames = _load_frames(cfg.get("input"))
    pcfg = PreprocessConfig(
        gaussian_width=cfg.get_float("gaussian_width"),
        cutoff=cfg.get_float("cutoff") if cfg.get("cutoff") else None,
        cutoff_mode=cfg.get("cutoff_mode"),
    )
    tensors = {}
    for i, frame in enumerate(frames):
        out = preprocess(frame, pcfg)
        pgm.write_pgm(ctx.path(f"frame_{i:04d}.pgm"), _rescaled(out))
        tensors[f"frame_{i:04d}"] = out
    save_file(ctx.path("frames.tpn"), tensors, ctx.cfg.resolved_text())


def _load_cached_or_pgm(path: str) -> list[np.ndarray]:
    """Accept a frames container (exact floats) or PGM file/dir."""
    if os.path.isfile(path) and path.endswith(".tpn"):
        tensors, _ = load_file(path)
        return [tensors[k].astype(np.float64) for k in sorted(tensors)]
    return _load_frames(path)


def stage_train_sc(ctx: RunContext) -> None:
    cfg = ctx.cfg
    frames = _load_cached_or_pgm(cfg.get("input"))
    rng = np.random.default_rng(cfg.seed)
    patch = cfg.get_int("patch_size")
    dictionary = Dictionary.random(patch * patch, cfg.get_int("n_code"), rng)
    hyper = SparseHyper(alpha=cfg.get_float("alpha"),
                        max_iters=cfg.get_int("max_iters"))
    rows = []
    for step in range(cfg.get_int("steps")):
        x = _random_patches(frames, patch, cfg.get_int("batch"), rng)
        d = train_dictionary_sc(x, dictionary, hyper, lr=cfg.get_float("lr"))
        rows.append([step, d.recon_err, d.pred_err, d.l1, d.energy])
    _write_csv(ctx.path("diagnostics.csv"),
               ["step", "recon_err", "pred_err", "l1", "energy"], rows)
    save_dictionary(ctx.path("model.tpn"), dictionary, ctx.cfg.resolved_text())


def stage_train_psd(ctx: RunContext) -> None:
    cfg = ctx.cfg
    frames = _load_cached_or_pgm(cfg.get("input"))
    rng = np.random.default_rng(cfg.seed)
    patch = cfg.get_int("patch_size")
    dictionary = Dictionary.random(patch * patch, cfg.get_int("n_code"), rng)
    model = SparseModel(dictionary,
                        EncoderParams.from_dictionary(dictionary,
                                                      flavor=cfg.get("flavor")))
    hyper = SparseHyper(alpha=cfg.get_float("alpha"),
                        max_iters=cfg.get_int("max_iters"))
    rows = []
    for step in range(cfg.get_int("steps")):
        x = _random_patches(frames, patch, cfg.get_int("batch"), rng)
        d = train_step_psd(x, model, hyper, lr=cfg.get_float("lr"))
        rows.append([step, d.recon_err, d.pred_err, d.l1, d.energy])
    _write_csv(ctx.path("diagnostics.csv"),
               ["step", "recon_err", "pred_err", "l1", "energy"], rows)
    save_sparse_model(ctx.path("model.tpn"), model, ctx.cfg.resolved_text())


def stage_train_local(ctx: RunContext) -> None:
    cfg = ctx.cfg
    frames = _load_cached_or_pgm(cfg.get("input"))
    rng = np.random.default_rng(cfg.seed)
    p = cfg.get_int("neighborhood")
    per = cfg.get("periodicity")
    topo = LocalTopology(
        image_size=frames[0].shape,
        neighborhood=(p, p),
        density=(Fraction(cfg.get("density")), Fraction(cfg.get("density"))),
        periodicity=None if per in ("", "none") else (int(per), int(per)),
    )
    net = LocalNet(topo, rng, flavor=cfg.get("flavor"))
    hyper = SparseHyper(alpha=cfg.get_float("alpha"))
    group_cfg = None
    if cfg.get("sparsity") == "group":
        group_cfg = GroupSparsityConfig(alpha=cfg.get_float("group_alpha"),
                                        sigma=cfg.get_float("sigma"),
                                        wrap=topo.periodicity is not None)
    elif cfg.get("sparsity") != "l1":
        raise StageError(f"unknown sparsity {cfg.get('sparsity')!r}")
    rows = []
    step = 0
    for _ in range(cfg.get_int("epochs")):
        for frame in frames:
            d = net.train_frame(frame, hyper, lr=cfg.get_float("lr"),
                                group_cfg=group_cfg,
                                code_iters=cfg.get_int("code_iters"),
                                infer_iters=cfg.get_int("infer_iters"))
            rows.append([step, d["recon_err"], 0.0, d["l1"], d["energy"]])
            step += 1
    _write_csv(ctx.path("diagnostics.csv"),
               ["step", "recon_err", "pred_err", "l1", "energy"], rows)
    save_local_net(ctx.path("model.tpn"), net, ctx.cfg.resolved_text())


def stage_train_tpn(ctx: RunContext) -> None:
    cfg = ctx.cfg
    frames = _load_cached_or_pgm(cfg.get("input"))
    n_tau = cfg.get_int("n_tau")
    if len(frames) < n_tau:
        raise StageError("need at least n_tau frames")
    rng = np.random.default_rng(cfg.seed)
    n_s = frames[0].size
    model = TpnModel.random(n_s, cfg.get_int("n_loc"), cfg.get_int("n_inv"),
                            rng, n_tau=n_tau, alpha=cfg.get_float("alpha"))
    stack = np.stack([f.ravel() for f in frames])
    rows = []
    for step in range(cfg.get_int("steps")):
        t0 = int(rng.integers(0, len(frames) - n_tau + 1))
        window = stack[t0 : t0 + n_tau]
        d = tpn_train_step(window, model, lr=cfg.get_float("lr"))
        rows.append([step, d["recon_err"], d["pred_err_loc"] + d["pred_err_inv"],
                     d["l1_loc"] + d["l1_inv"], d["energy"]])
    _write_csv(ctx.path("diagnostics.csv"),
               ["step", "recon_err", "pred_err", "l1", "energy"], rows)
    save_tpn_model(ctx.path("model.tpn"), model, ctx.cfg.resolved_text())


def _fit_rows(filters) -> tuple[list, list]:
    fits = []
    rows = []
    for name, patch in filters:
        fit = analysis.fit_gabor(patch)
        fits.append((name, fit))
        rows.append([name, fit.orientation, fit.frequency, fit.phase,
                     fit.center[0], fit.center[1], fit.sigma_x, fit.sigma_y,
                     fit.amplitude, fit.r2])
    return fits, rows


def stage_analyze(ctx: RunContext) -> None:
    cfg = ctx.cfg
    if not os.path.isfile(cfg.get("model")):
        raise StageError(f"model not found: {cfg.get('model')}")
    kind, model, _meta = load_model(cfg.get("model"))
    header = ["name", "orientation", "frequency", "phase", "cx", "cy",
              "sigma_x", "sigma_y", "amplitude", "r2"]
    r2_thr = cfg.get_float("r2_threshold")
    if kind in ("dictionary", "sparse-model"):
        dictionary = model if kind == "dictionary" else model.dictionary
        side = int(round(math.sqrt(dictionary.n_x)))
        if side * side != dictionary.n_x:
            raise StageError("dictionary input dimension is not a square patch")
        filters = [(str(j), dictionary.atoms[:, j].reshape(side, side))
                   for j in range(dictionary.n_z)]
        _, rows = _fit_rows(filters)
        _write_csv(ctx.path("gabor_fits.csv"), header, rows)
    elif kind == "local-net":
        tile = model.tile_filters()
        cells = sorted(tile)
        filters = [(f"{cy},{cx}", tile[(cy, cx)].decode) for cy, cx in cells]
        fits, rows = _fit_rows(filters)
        _write_csv(ctx.path("gabor_fits.csv"), header, rows)
        ys = sorted({c[0] for c in cells})
        xs = sorted({c[1] for c in cells})
        grid = np.empty((len(ys), len(xs)), dtype=object)
        orient = np.full((len(ys), len(xs)), np.nan)
        for (name, fit), (cy, cx) in zip(fits, cells):
            iy, ix = ys.index(cy), xs.index(cx)
            grid[iy, ix] = fit
            if fit.r2 >= r2_thr and not fit.degenerate:
                orient[iy, ix] = fit.orientation
        pgm.write_ppm(ctx.path("orientation_map.ppm"),
                      analysis.orientation_map(grid, r2_thr))
        try:
            wrap = model.topo.periodicity is not None
            score, p = analysis.topography_score(
                orient, cfg.get_int("permutations"), seed=ctx.cfg.seed, wrap=wrap)
            report = f"score={score}\np_value={p}\n"
        except analysis.InsufficientDataError as exc:
            report = f"error={exc}\n"
        with open(ctx.path("topography.txt"), "w") as f:
            f.write(report)
    else:
        raise StageError(f"analyze does not support model kind {kind!r}")


def stage_describe(ctx: RunContext) -> None:
    cfg = ctx.cfg
    if not os.path.isfile(cfg.get("model")):
        raise StageError(f"model not found: {cfg.get('model')}")
    kind, model, _meta = load_model(cfg.get("model"))
    lines = [f"kind: {kind}"]
    if kind == "local-net":
        topo = model.topo
        c = float(topo.density[0] * topo.density[1])
        n2 = topo.image_size[0] * topo.image_size[1]
        p2 = topo.neighborhood[0] * topo.neighborhood[1]
        lines += [
            f"image: {topo.image_size[0]}x{topo.image_size[1]}",
            f"neighborhood: {topo.neighborhood[0]}x{topo.neighborhood[1]}",
            f"density: {topo.density[0]},{topo.density[1]}",
            f"cells: {topo.cells[0]}x{topo.cells[1]} ({model.n_units} units)",
            f"tiling: {'none' if topo.periodicity is None else '%dx%d cells' % topo.periodicity}",
            f"tile filters: {sum(1 for k in model.filters if k[0] == 'tile')}",
            f"boundary filters: {sum(1 for k in model.filters if k[0] == 'bnd')}",
            f"connections: {topo.connection_count()}",
            f"uniform-count C*N^2*P^2: {c * n2 * p2:.0f}",
        ]
    elif kind in ("dictionary", "sparse-model"):
        d = model if kind == "dictionary" else model.dictionary
        lines += [f"input dim: {d.n_x}", f"code dim: {d.n_z}"]
    elif kind == "tpn":
        lines += [
            f"feature dim: {model.n_s}",
            f"location units: {model.loc_dict.n_z}",
            f"invariant units: {model.inv_dict.n_z}",
            f"window length: {model.n_tau}",
        ]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    with open(ctx.path("describe.txt"), "w") as f:
        f.write(text)


def stage_tpn_responses(ctx: RunContext) -> None:
    """Responses of trained window-code units to bumps at every position."""
    cfg = ctx.cfg
    if not os.path.isfile(cfg.get("model")):
        raise StageError(f"model not found: {cfg.get('model')}")
    kind, model, _meta = load_model(cfg.get("model"))
    if kind != "tpn":
        raise StageError("tpn-responses requires a tpn model")
    size = cfg.get_int("size")
    width = cfg.get_float("width")
    rows = []
    for y in range(size):
        for x in range(size):
            frames = [stimuli.gaussian_bump((size, size), (x + t, y), width).ravel()
                      for t in range(model.n_tau)]
            code = tpn_infer(np.stack(frames), model)
            for j, v in enumerate(code.inv):
                rows.append(["inv", j, x, y, v])
            for j, v in enumerate(code.loc[0]):
                rows.append(["loc", j, x, y, v])
    _write_csv(ctx.path("responses.csv"), ["group", "unit", "x", "y", "response"],
               rows)


STAGE_RUNNERS = {
    "gen": stage_gen,
    "preprocess": stage_preprocess,
    "train-sc": stage_train_sc,
    "train-psd": stage_train_psd,
    "train-local": stage_train_local,
    "train-tpn": stage_train_tpn,
    "analyze": stage_analyze,
    "describe": stage_describe,
    "tpn-responses": stage_tpn_responses,
}


def run(cfg: ExperimentConfig, out_dir: str, threads: int = 1,
        deterministic: bool = True) -> int:
    ctx = RunContext(out_dir, cfg, threads, deterministic)
    try:
        STAGE_RUNNERS[cfg.stage](ctx)
    except Exception as exc:
        ctx.cleanup()
        sys.stderr.write(f"error: {exc}\n")
        return 1
    with open(os.path.join(out_dir, "config.resolved"), "w") as f:
        f.write(cfg.resolved_text())
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tpnet", description="Run one experiment stage from a config file.")
    parser.add_argument("--config", required=True, help="key=value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", required=True, help="artifact directory")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--deterministic", action="store_true", default=True)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
    except (OSError, ConfigError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    return run(cfg, args.out, args.threads, args.deterministic)


if __name__ == "__main__":
    sys.exit(main())
