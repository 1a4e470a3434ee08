"""Image I/O and small synthetic panoramas for desk-scale runs."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .cubemap import erp_to_cmp

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm", ".jpg", ".jpeg")


def load_image(path) -> np.ndarray:
    """Read an 8-bit image as a (3, H, W) float array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def load_mask(path) -> np.ndarray:
    """Read a mask image as (H, W) binary floats (threshold 0.5)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return (arr >= 0.5).astype(np.float64)


def to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(arr) * 255.0), 0, 255).astype(np.uint8)


def save_image(path, arr: np.ndarray) -> None:
    """Write a (3, H, W), (1, H, W) or (H, W) array in [0, 1]; format follows the suffix."""
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim == 3:
        img = Image.fromarray(to_uint8(arr.transpose(1, 2, 0)), "RGB")
    else:
        img = Image.fromarray(to_uint8(arr), "L")
    img.save(path)


def list_images(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _directions(height: int) -> np.ndarray:
    w = 2 * height
    lat = (0.5 - (np.arange(height) + 0.5) / height) * np.pi
    lon = ((np.arange(w) + 0.5) / w - 0.5) * 2 * np.pi
    lon, lat = np.meshgrid(lon, lat)
    return np.stack([np.cos(lat) * np.sin(lon), np.sin(lat), np.cos(lat) * np.cos(lon)])


def synthetic_panorama(height: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth street-like (3, H, 2H) panorama: sky above, ground below, soft blobs.

    Built from functions of the viewing direction, so it is seamless on the sphere.
    """
    d = _directions(height)
    up = d[1]
    sky = np.array([0.45, 0.65, 0.9]) + rng.uniform(-0.1, 0.1, 3)
    ground = np.array([0.4, 0.38, 0.35]) + rng.uniform(-0.1, 0.1, 3)
    blend = 1 / (1 + np.exp(-8 * (up - rng.uniform(-0.1, 0.1))))
    img = blend[None] * sky[:, None, None] + (1 - blend[None]) * ground[:, None, None]
    for _ in range(4):
        centre = rng.normal(size=3)
        centre[1] *= 0.3
        centre /= np.linalg.norm(centre)
        sharp = rng.uniform(3, 8)
        colour = rng.uniform(-0.3, 0.3, 3)
        bump = np.exp(sharp * (np.tensordot(centre, d, axes=1) - 1))
        img += colour[:, None, None] * bump[None]
    return np.clip(img, 0.0, 1.0)


def synthetic_faces(count: int, face_size: int, seed: int = 0) -> np.ndarray:
    """(count, 6, 3, S, S) float32 cube faces of synthetic panoramas."""
    rng = np.random.default_rng(seed)
    height = 2 * face_size
    return np.stack([erp_to_cmp(synthetic_panorama(height, rng), face_size)
                     for _ in range(count)]).astype(np.float32)


def load_faces_dir(directory, face_size: int, limit: int | None = None) -> tuple[np.ndarray, list[str]]:
    """Project every readable ERP image in ``directory``; unreadable files are skipped."""
    faces, names, skipped = [], [], 0
    for path in list_images(directory):
        try:
            erp = load_image(path)
            faces.append(erp_to_cmp(erp, face_size).astype(np.float32))
            names.append(path.stem)
        except (OSError, ValueError) as exc:
            skipped += 1
            logger.warning("skipping %s: %s", path, exc)
        if limit is not None and len(faces) >= limit:
            break
    if skipped:
        logger.warning("%d unreadable image(s) skipped in %s", skipped, directory)
    if not faces:
        raise ValueError(f"no usable images in {directory}")
    return np.stack(faces), names
