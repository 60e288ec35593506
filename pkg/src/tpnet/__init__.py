"""Unsupervised feature learning: sparse coding with feed-forward encoders,
locally-connected networks with periodic tile sharing, group-sparsity
topographic pooling, and the temporal product network that factors video
into invariant content codes and per-frame location codes."""

__version__ = "0.1.0"
