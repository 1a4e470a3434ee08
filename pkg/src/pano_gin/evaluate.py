"""Mask-ratio binned PSNR/SSIM evaluation on reprojected panoramas."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cubemap import cmp_to_erp
from .masks import MaskSpec, sample_mask
from .metrics import psnr, ssim
from .train import inpaint

logger = logging.getLogger(__name__)

TABLE_BINS = ((0.0, 0.1), (0.1, 0.2), (0.2, 0.3))


@dataclass
class EvalRecord:
    image: str
    ratio: float
    psnr: float
    ssim: float


@dataclass
class RatioBin:
    lo: float
    hi: float
    count: int = 0
    psnr: float = math.nan
    ssim: float = math.nan

    @property
    def label(self) -> str:
        return f"{self.lo:g}-{self.hi:g}"


def parse_bins(text: str) -> list[tuple[float, float]]:
    """``"0.1,0.2,0.3"`` -> [(0, 0.1), (0.1, 0.2), (0.2, 0.3)]."""
    edges = [float(t) for t in text.split(",") if t.strip()]
    if not edges or any(e <= 0 or e > 1 for e in edges) or sorted(edges) != edges \
            or len(set(edges)) != len(edges):
        raise ValueError(f"bins must be increasing upper edges in (0, 1], got {text!r}")
    lows = [0.0] + edges[:-1]
    return list(zip(lows, edges))


def aggregate(records: list[EvalRecord], bins) -> list[RatioBin]:
    """Assign each record to the one bin containing its ratio; average per bin."""
    out = [RatioBin(lo, hi) for lo, hi in bins]
    members: list[list[EvalRecord]] = [[] for _ in out]
    for r in records:
        hits = [i for i, b in enumerate(out) if b.lo <= r.ratio < b.hi]
        if len(hits) != 1:
            raise ValueError(f"record {r.image} with ratio {r.ratio} falls in {len(hits)} bins")
        members[hits[0]].append(r)
    for b, group in zip(out, members):
        b.count = len(group)
        if group:
            b.psnr = float(np.mean([r.psnr for r in group]))
            b.ssim = float(np.mean([r.ssim for r in group]))
    return out


def evaluate_image(model, faces: np.ndarray, mask: np.ndarray, erp_height: int,
                   space: str = "erp", masked_only: bool = False):
    """PSNR/SSIM of the composited result against the ground-truth faces.

    ``faces`` (6, 3, S, S), ``mask`` (6, S, S). In ``erp`` space both sides are
    reprojected to a (3, H, 2H) panorama; ``faces`` compares the side strip.
    """
    out = inpaint(model, faces[None], mask[None, :, None])[0].astype(np.float64)
    gt = faces.astype(np.float64)
    if space == "erp":
        a, b = cmp_to_erp(out, erp_height), cmp_to_erp(gt, erp_height)
        region = cmp_to_erp(np.repeat(mask[:, None], 3, 1), erp_height, "nearest") > 0
    elif space == "faces":
        a = np.concatenate(list(out), axis=-1)
        b = np.concatenate(list(gt), axis=-1)
        region = np.concatenate(list(np.repeat(mask[:, None], 3, 1)), axis=-1) > 0
    else:
        raise ValueError(f"unknown metric space {space!r}")
    p = psnr(a, b, where=region if masked_only else None)
    return out, p, ssim(a, b)


def evaluate(model, faces: np.ndarray, names: list[str], bins=TABLE_BINS, seed: int = 0,
             erp_height: int | None = None, space: str = "erp", masked_only: bool = False,
             mask_specs: list[MaskSpec] | None = None, grid_dir=None):
    """Per image and per bin: sample a mask in the bin, inpaint, score.

    Returns (records, bins). ``mask_specs`` overrides the default spec per bin.
    """
    if len(faces) == 0:
        raise ValueError("nothing to evaluate")
    rng = np.random.default_rng(seed)
    s = faces.shape[-1]
    erp_height = erp_height or 2 * s
    specs = mask_specs or [MaskSpec(lo, hi) for lo, hi in bins]
    records = []
    for img, name in zip(faces, names):
        for spec in specs:
            mask = sample_mask(spec, s, rng)
            out, p, q = evaluate_image(model, img, mask, erp_height, space, masked_only)
            ratio = float(mask.mean())
            records.append(EvalRecord(name, ratio, p, q))
            if grid_dir is not None:
                save_grid(Path(grid_dir) / f"{name}_{spec.lo:g}-{spec.hi:g}.png",
                          img, mask, out, erp_height)
    return records, aggregate(records, bins)


def save_grid(path, faces, mask, out, erp_height) -> None:
    """Input / output / ground truth panoramas stacked vertically."""
    from .data import save_image

    corrupted = faces * (1 - mask[:, None])
    rows = [cmp_to_erp(a.astype(np.float64), erp_height) for a in (corrupted, out, faces)]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_image(path, np.concatenate(rows, axis=1))


def write_report(path, bins: list[RatioBin]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin", "n", "psnr", "ssim"])
        for b in bins:
            w.writerow([b.label, b.count, f"{b.psnr:.4f}", f"{b.ssim:.6f}"])
