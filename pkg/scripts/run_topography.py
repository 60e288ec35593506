"""Train a 100-atom dictionary laid out on a 10x10 torus cell grid under the
group-sparsity penalty and test whether the learned Gabor orientations form
a smooth map (permutation test on neighboring-orientation distances).

Overcompleteness is what gives the penalty leverage: with 6x6 patches and
100 units many codes reconstruct equally well, and the pooled penalty picks
the spatially clustered one, so co-tuned atoms drift together on the grid."""

import argparse
import time

import numpy as np

from tpnet.analysis import fit_gabor, topography_score
from tpnet.groupsparse import GroupSparsityConfig, infer_code_grouped
from tpnet.model_io import save_dictionary
from tpnet.preprocess import PreprocessConfig, preprocess
from tpnet.sparse import Dictionary, dictionary_grad
from tpnet.stimuli import random_edge_scene

GRID = (10, 10)


def make_patch_sampler(rng: np.random.Generator, patch: int):
    pcfg = PreprocessConfig(gaussian_width=4.0)
    scenes = [preprocess(random_edge_scene(40, 30, seed=i), pcfg)
              for i in range(60)]

    def patches(n: int) -> np.ndarray:
        out = np.empty((n, patch * patch))
        for i in range(n):
            s = scenes[rng.integers(len(scenes))]
            y, x = rng.integers(0, 40 - patch, 2)
            out[i] = s[y : y + patch, x : x + patch].ravel()
        return out

    return patches


def orientation_map(dictionary: Dictionary, patch: int, r2_min=0.3):
    oris = np.full(GRID, np.nan)
    for i in range(dictionary.n_z):
        f = fit_gabor(dictionary.atoms[:, i].reshape(patch, patch))
        if f.r2 >= r2_min and not f.degenerate:
            oris[i // GRID[1], i % GRID[1]] = f.orientation
    return oris


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--steps", type=int, default=4000)
    parser.add_argument("--alpha", type=float, default=0.2)
    parser.add_argument("--patch", type=int, default=6)
    parser.add_argument("--lr", type=float, default=0.05)
    parser.add_argument("--out", default="runs/topography.tpn")
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    patches = make_patch_sampler(rng, args.patch)
    cfg = GroupSparsityConfig(alpha=args.alpha, sigma=1.5, wrap=True)
    dictionary = Dictionary.random(args.patch ** 2, GRID[0] * GRID[1], rng)

    t0 = time.time()
    for step in range(args.steps):
        x = patches(20)
        state = infer_code_grouped(x, dictionary, GRID, cfg)
        dictionary.atoms -= args.lr * dictionary_grad(
            x.T, state.z.reshape(20, -1).T, dictionary)
        dictionary.normalize()
        if step % 500 == 0:
            r = x - state.z.reshape(20, -1) @ dictionary.atoms.T
            print(f"step {step:5d}  recon {np.sum(r * r) / 20:.3f}  "
                  f"|z| {np.abs(state.z).mean():.3f}  t {time.time() - t0:.0f}s",
                  flush=True)

    oris = orientation_map(dictionary, args.patch)
    score, p = topography_score(oris, wrap=True)
    print(f"valid fits {int(np.sum(~np.isnan(oris)))}/100")
    print(f"topography score {score:.3f}  p {p:.4f}")
    save_dictionary(args.out, dictionary,
                    f"seed={args.seed}\nsteps={args.steps}\nalpha={args.alpha}\n"
                    f"patch={args.patch}\n")
    print("dictionary saved to", args.out)


if __name__ == "__main__":
    main()
