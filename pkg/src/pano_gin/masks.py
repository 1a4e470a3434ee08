"""Random free-form masks over the six cube faces, rejection-sampled into a ratio bin."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MaskSpec:
    """Target coverage interval [lo, hi) plus the shape budget used to reach it.

    Stroke widths and rectangle sides are fractions of the face size.
    """
    lo: float = 0.1
    hi: float = 0.2
    strokes: tuple[int, int] = (1, 4)
    stroke_width: tuple[float, float] = (0.04, 0.12)
    rects: tuple[int, int] = (0, 2)
    rect_size: tuple[float, float] = (0.1, 0.4)
    seed: int | None = None
    max_retries: int = 200
    max_shapes: int = 256

    def __post_init__(self):
        if not 0 <= self.lo < self.hi <= 1:
            raise ValueError(f"need 0 <= lo < hi <= 1, got [{self.lo}, {self.hi})")


def _draw_segment(canvas: np.ndarray, p0, p1, radius: float) -> None:
    h, w = canvas.shape
    x0, y0 = p0
    x1, y1 = p1
    r0 = int(max(min(y0, y1) - radius - 1, 0))
    r1 = int(min(max(y0, y1) + radius + 2, h))
    c0 = int(max(min(x0, x1) - radius - 1, 0))
    c1 = int(min(max(x0, x1) + radius + 2, w))
    if r0 >= r1 or c0 >= c1:
        return
    yy, xx = np.mgrid[r0:r1, c0:c1] + 0.5
    dx, dy = x1 - x0, y1 - y0
    length2 = dx * dx + dy * dy
    t = 0.0 if length2 == 0 else np.clip(((xx - x0) * dx + (yy - y0) * dy) / length2, 0, 1)
    dist2 = (xx - x0 - t * dx) ** 2 + (yy - y0 - t * dy) ** 2
    canvas[r0:r1, c0:c1][dist2 <= radius * radius] = 1


def draw_stroke(canvas: np.ndarray, rng: np.random.Generator, size: int,
                width: tuple[float, float]) -> None:
    """Thick random polyline with 3-7 vertices."""
    h, w = canvas.shape
    radius = rng.uniform(*width) * size / 2
    pt = (rng.uniform(0, w), rng.uniform(0, h))
    angle = rng.uniform(0, 2 * np.pi)
    for _ in range(int(rng.integers(2, 7))):
        angle += rng.uniform(-np.pi / 3, np.pi / 3)
        length = rng.uniform(0.1, 0.4) * size
        nxt = (pt[0] + length * np.cos(angle), pt[1] + length * np.sin(angle))
        _draw_segment(canvas, pt, nxt, radius)
        pt = nxt


def draw_rect(canvas: np.ndarray, rng: np.random.Generator, size: int,
              side: tuple[float, float]) -> None:
    h, w = canvas.shape
    rh = max(1, int(rng.uniform(*side) * size))
    rw = max(1, int(rng.uniform(*side) * size))
    r = int(rng.integers(0, max(h - rh, 0) + 1))
    c = int(rng.integers(0, max(w - rw, 0) + 1))
    canvas[r:r + rh, c:c + rw] = 1


def _add_shape(faces, strip, kind, spec, rng, size, sides_only):
    # side strip holds 4 of the 6 faces, so it gets 4/6 of the shapes
    if sides_only or rng.uniform() < 4 / 6:
        canvas = strip
    else:
        canvas = faces[4 + int(rng.integers(0, 2))]
    if kind == "stroke":
        draw_stroke(canvas, rng, size, spec.stroke_width)
    else:
        draw_rect(canvas, rng, size, spec.rect_size)


def sample_mask(spec: MaskSpec, face_size: int, rng: np.random.Generator | None = None,
                sides_only: bool = False) -> np.ndarray:
    """Binary (6, S, S) mask (1 = missing) whose mean lies in [spec.lo, spec.hi).

    Raises ValueError when no draw lands in the interval within
    ``spec.max_retries`` attempts.
    """
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    s = face_size
    kinds = [k for k, (_, hi) in (("stroke", spec.strokes), ("rect", spec.rects)) if hi > 0]
    for _ in range(spec.max_retries):
        faces = np.zeros((6, s, s), dtype=np.float32)
        strip = np.zeros((s, 4 * s), dtype=np.float32)
        shapes = ["stroke"] * int(rng.integers(spec.strokes[0], spec.strokes[1] + 1))
        shapes += ["rect"] * int(rng.integers(spec.rects[0], spec.rects[1] + 1))
        for kind in shapes:
            _add_shape(faces, strip, kind, spec, rng, s, sides_only)

        def coverage():
            return (strip.sum() + faces[4:].sum()) / (6 * s * s)

        added = 0
        while coverage() < spec.lo and kinds and added < spec.max_shapes:
            _add_shape(faces, strip, kinds[int(rng.integers(0, len(kinds)))], spec, rng, s,
                       sides_only)
            added += 1
        if spec.lo <= coverage() < spec.hi:
            faces[:4] = np.stack(np.split(strip, 4, axis=1))
            return faces
    raise ValueError(f"could not sample a mask with coverage in [{spec.lo}, {spec.hi}) "
                     f"after {spec.max_retries} attempts")


def mask_ratio(mask: np.ndarray) -> float:
    return float(np.mean(mask))
