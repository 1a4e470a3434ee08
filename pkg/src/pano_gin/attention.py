"""Similarity-weighted patch replacement for the training-only side branch.

Feature patches touching a missing pixel are rebuilt as a softmax-weighted
mix of fully known patches; weights come from cosine similarity between
patches of the similarity encoder's output.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

logger = logging.getLogger(__name__)

COS_EPS = 1e-8


@dataclass
class PatchGrid:
    patches: Tensor          # (L, C, p, p)
    coords: np.ndarray       # (L, 2) top-left (row, col)
    size: int
    stride: int

    def __len__(self) -> int:
        return self.patches.shape[0]

    def flat(self) -> Tensor:
        return T.reshape(self.patches, (len(self), -1))

    def subset(self, rows: np.ndarray) -> "PatchGrid":
        rows = np.asarray(rows, dtype=np.intp)
        return PatchGrid(T.index_select(self.patches, 0, rows), self.coords[rows],
                         self.size, self.stride)


def _grid_coords(h: int, w: int, p: int, stride: int) -> np.ndarray:
    rows = np.arange(0, h - p + 1, stride)
    cols = np.arange(0, w - p + 1, stride)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def extract_patches(feature: Tensor, p: int, stride: int = 1) -> PatchGrid:
    """All p×p windows of a (C, H, W) feature, in row-major window order."""
    c, h, w = feature.shape
    if p < 1 or stride < 1 or p > h or p > w or stride > max(h, w):
        raise ValueError(f"patch size {p} / stride {stride} do not fit feature {feature.shape}")
    cols = T.unfold(T.reshape(feature, (1, c, h, w)), p, stride)
    flat = T.transpose(T.reshape(cols, cols.shape[1:]), (1, 0))
    patches = T.reshape(flat, (flat.shape[0], c, p, p))
    return PatchGrid(patches, _grid_coords(h, w, p, stride), p, stride)


def cosine_similarity(missing: PatchGrid, known: PatchGrid) -> Tensor:
    """(num_missing, num_known) cosine scores with norms floored at 1e-8."""
    m, k = missing.flat(), known.flat()
    mn = T.clip_min(T.sqrt(T.add(T.tsum(T.mul(m, m), 1, keepdims=True), 1e-30)), COS_EPS)
    kn = T.clip_min(T.sqrt(T.add(T.tsum(T.mul(k, k), 1, keepdims=True), 1e-30)), COS_EPS)
    return T.matmul(T.div(m, mn), T.transpose(T.div(k, kn), (1, 0)))


def attend(sim: Tensor, known: Tensor, temperature: float) -> Tensor:
    """Rows of ``softmax(sim / temperature) @ known``: one rebuilt patch per missing patch."""
    weights = T.softmax(T.mul(sim, 1.0 / temperature), axis=1)
    return T.matmul(weights, known)


def patch_mask(mask: np.ndarray, p: int, stride: int) -> np.ndarray:
    """Boolean per-window flag: True when any pixel of the window is missing."""
    h, w = mask.shape
    win = np.lib.stride_tricks.sliding_window_view(mask, (p, p))[::stride, ::stride]
    return win.reshape(win.shape[0], win.shape[1], -1).max(axis=-1).ravel() > 0


def replace_patches(feature: Tensor, sim: Tensor, missing: np.ndarray, p: int,
                    stride: int = 1, temperature: float = 0.1) -> Tensor:
    """Rebuild missing-patch coverage of a (C, H, W) feature from known patches.

    ``missing`` flags every window of the p×p / stride grid; ``sim`` rows follow
    the missing windows in grid order, columns the known ones. Values outside
    the coverage of missing windows are returned untouched; inside it,
    overlapping windows (rebuilt and original) are averaged.
    """
    missing = np.asarray(missing, dtype=bool)
    if not missing.any():
        return feature
    if missing.all():
        raise ValueError("no known patches: the feature is fully masked")
    c, h, w = feature.shape
    grid = extract_patches(feature, p, stride)
    if len(missing) != len(grid):
        raise ValueError(f"mask grid has {len(missing)} windows, feature has {len(grid)}")
    m_idx, k_idx = np.flatnonzero(missing), np.flatnonzero(~missing)
    if sim.shape != (len(m_idx), len(k_idx)):
        raise ValueError(f"similarity shape {sim.shape} != ({len(m_idx)}, {len(k_idx)})")
    flat = grid.flat()
    rebuilt = attend(sim, T.index_select(flat, 0, k_idx), temperature)
    keep = Tensor((~missing).astype(feature.dtype)[:, None])
    combined = T.add(T.mul(flat, keep), T.index_add(rebuilt, 0, m_idx, len(grid)))

    def fold(rows: Tensor) -> Tensor:
        return T.fold(T.reshape(T.transpose(rows, (1, 0)), (1, c * p * p, len(grid))),
                      (h, w), p, stride)

    ones = np.ones((len(grid), c * p * p), dtype=feature.dtype)
    with T.no_grad():
        count = fold(Tensor(ones)).data[0]
        cover = fold(Tensor(ones * missing[:, None])).data[0] > 0
    averaged = T.div(T.reshape(fold(combined), (c, h, w)), Tensor(np.maximum(count, 1)))
    inside = Tensor(cover.astype(feature.dtype))
    return T.add(T.mul(feature, T.sub(1.0, inside)), T.mul(averaged, inside))


def downsample_mask(mask: np.ndarray, size) -> np.ndarray:
    """Max-pool a (..., H, W) binary mask to ``size`` (integer factors)."""
    h, w = mask.shape[-2:]
    th, tw = size
    if h % th or w % tw:
        raise ValueError(f"cannot pool mask {mask.shape[-2:]} to {size}")
    lead = mask.shape[:-2]
    return mask.reshape(*lead, th, h // th, tw, w // tw).max(axis=(-3, -1))


def side_branch(model, feature: Tensor, mask: np.ndarray, sizes) -> Tensor:
    """Y from an encoder feature: SCB similarity, patch replacement, side decoder.

    ``mask`` is (N, 6, 1, S, S); a window counts as missing if any face is
    missing any pixel under it. Items with no known window skip replacement.
    """
    cfg = model.config
    p, stride = cfg.patch_size, cfg.patch_stride
    n, c, h, w = feature.shape
    p = min(p, h, w)
    union = np.asarray(mask).max(axis=(1, 2))                    # (N, S, S)
    small = downsample_mask(union, (h, w))
    sim_feat = model.scb(feature)
    out = []
    for i in range(n):
        flags = patch_mask(small[i], p, stride)
        f_i = feature[i]
        if flags.any() and not flags.all():
            grid = extract_patches(sim_feat[i], p, stride)
            m_idx, k_idx = np.flatnonzero(flags), np.flatnonzero(~flags)
            sim = cosine_similarity(grid.subset(m_idx), grid.subset(k_idx))
            f_i = replace_patches(f_i, sim, flags, p, stride, cfg.temperature)
        elif flags.all():
            logger.debug("side branch: item %d has no known patch, replacement skipped", i)
        out.append(f_i)
    replaced = T.stack(out, axis=0)
    return model.side_dec(replaced, sizes)
