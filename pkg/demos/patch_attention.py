"""Filling a hole by borrowing similar patches from the known region."""

import numpy as np

from pano_gin import tensor as T
from pano_gin.attention import cosine_similarity, extract_patches, patch_mask, replace_patches
from pano_gin.tensor import Tensor

rng = np.random.default_rng(1)
with T.precision(np.float64):
    # a feature map made of stripes, with a hole in the middle
    cols = np.tile(np.sin(np.arange(12) * 1.3), (12, 1))
    feat = Tensor(np.stack([cols, cols.T, rng.normal(0, 0.05, (12, 12))]))
    mask = np.zeros((12, 12))
    mask[5:7, 5:7] = 1

    grid = extract_patches(feat, 3)
    missing = patch_mask(mask, 3, 1)
    print(f"{len(grid)} patches, {missing.sum()} touch the hole")
    sim = cosine_similarity(grid.subset(np.flatnonzero(missing)),
                            grid.subset(np.flatnonzero(~missing)))
    print("similarity range", float(sim.data.min()), float(sim.data.max()))
    weights = T.softmax(T.mul(sim, 10.0), axis=1).data
    print("attention rows sum to one:", np.allclose(weights.sum(1), 1))

    out = replace_patches(feat, sim, missing, 3, 1, 0.1).data
    changed = np.any(out != feat.data, axis=0)
    print("changed pixels:\n", changed.astype(int))
