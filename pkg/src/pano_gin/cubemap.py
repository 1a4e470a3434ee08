"""Equirectangular <-> cubemap projection and side-face strip stitching.

Conventions (used everywhere, including checkpoints and the CLI):

* world axes: x right, y up, z forward; longitude ``atan2(x, z)`` grows to
  the right of the panorama, latitude grows upward;
* faces are ordered ``front, right, back, left, top, bottom`` with the four
  side faces at yaw 0°, 90°, 180°, 270°;
* face images are (3, S, S) arrays, ERP images are (3, H, 2H), all in [0, 1].

Stitching the side faces left to right in yaw order gives a (3, S, 4S) strip
whose content is continuous across each internal seam and across the wrap
from the right edge back to the left edge.
"""

from __future__ import annotations

import numpy as np

FACE_NAMES = ("front", "right", "back", "left", "top", "bottom")
SIDE_FACES = 4


def face_directions(face: int, size: int) -> np.ndarray:
    """Unnormalised viewing directions (3, S, S) for every pixel centre of a face."""
    t = (np.arange(size, dtype=np.float64) + 0.5) * 2.0 / size - 1.0
    v, u = np.meshgrid(t, t, indexing="ij")  # v grows downward, u to the right
    one = np.ones_like(u)
    if face == 0:
        d = (u, -v, one)
    elif face == 1:
        d = (one, -v, -u)
    elif face == 2:
        d = (-u, -v, -one)
    elif face == 3:
        d = (-one, -v, u)
    elif face == 4:
        d = (u, one, v)
    elif face == 5:
        d = (u, -one, -v)
    else:
        raise ValueError(f"face index must be in 0..5, got {face}")
    return np.stack(d)


def _lonlat(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x, y, z = d
    lon = np.arctan2(x, z)
    lat = np.arctan2(y, np.hypot(x, z))
    return lon, lat


def _erp_coords(lon, lat, h, w):
    col = (lon / (2 * np.pi) + 0.5) * w - 0.5
    row = (0.5 - lat / np.pi) * h - 0.5
    return row, col


def _bilinear_erp(img: np.ndarray, row: np.ndarray, col0: np.ndarray,
                  colf: np.ndarray) -> np.ndarray:
    """Sample (C, H, W) at integer column ``col0`` + fraction ``colf``.

    Columns wrap around; rows are clamped at the poles.
    """
    _, h, w = img.shape
    row = np.clip(row, 0.0, h - 1.0)
    r0 = np.floor(row).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    rf = row - r0
    c0 = col0 % w
    c1 = (col0 + 1) % w
    top = img[:, r0, c0] * (1 - colf) + img[:, r0, c1] * colf
    bot = img[:, r1, c0] * (1 - colf) + img[:, r1, c1] * colf
    return top * (1 - rf) + bot * rf


def _nearest_erp(img, row, col):
    _, h, w = img.shape
    r = np.clip(np.floor(row + 0.5).astype(np.intp), 0, h - 1)
    c = np.floor(col + 0.5).astype(np.intp) % w
    return img[:, r, c]


def _check_erp(erp: np.ndarray) -> None:
    if erp.ndim != 3:
        raise ValueError(f"ERP image must be (C, H, W), got shape {erp.shape}")
    _, h, w = erp.shape
    if w != 2 * h:
        raise ValueError(f"ERP image must be twice as wide as high, got {h}x{w}")


def erp_to_cmp(erp: np.ndarray, face_size: int, mode: str = "bilinear") -> np.ndarray:
    """Project a (C, H, 2H) panorama onto six (C, S, S) faces, returned as (6, C, S, S).

    ``mode='nearest'`` is for masks; the result is re-binarised at 0.5.
    """
    _check_erp(erp)
    if face_size < 2:
        raise ValueError(f"face_size must be >= 2, got {face_size}")
    erp = np.asarray(erp)
    c, h, w = erp.shape
    faces = np.empty((6, c, face_size, face_size), dtype=np.float64)
    # Side faces share one sampling grid shifted by whole quarter turns, so a
    # 90° yaw of the panorama permutes them exactly when w % 4 == 0.
    lon, lat = _lonlat(face_directions(0, face_size))
    row, col = _erp_coords(lon, lat, h, w)
    for k in range(SIDE_FACES):
        if mode == "nearest":
            faces[k] = _nearest_erp(erp, row, col + k * w / 4)
        else:
            shift = k * w / 4
            base = np.floor(col)
            frac = col - base
            if float(shift).is_integer():
                c0 = base.astype(np.intp) + int(shift)
            else:
                full = col + shift
                c0 = np.floor(full).astype(np.intp)
                frac = full - c0
            faces[k] = _bilinear_erp(erp, row, c0, frac)
    for k in (4, 5):
        lon, lat = _lonlat(face_directions(k, face_size))
        row, col = _erp_coords(lon, lat, h, w)
        if mode == "nearest":
            faces[k] = _nearest_erp(erp, row, col)
        else:
            base = np.floor(col)
            faces[k] = _bilinear_erp(erp, row, base.astype(np.intp), col - base)
    if mode == "nearest":
        faces = (faces >= 0.5).astype(np.float64)
    return np.clip(faces, 0.0, 1.0)


def _direction_to_face(d: np.ndarray):
    """Face index and (row, col) pixel coordinates for unit directions (3, ...)."""
    x, y, z = d
    ax, ay, az = np.abs(x), np.abs(y), np.abs(z)
    face = np.empty(x.shape, dtype=np.intp)
    u = np.empty(x.shape)
    v = np.empty(x.shape)
    major_x = (ax >= ay) & (ax >= az)
    major_y = ~major_x & (ay >= az)
    major_z = ~major_x & ~major_y

    m = major_z & (z > 0)
    face[m], u[m], v[m] = 0, x[m] / az[m], -y[m] / az[m]
    m = major_x & (x > 0)
    face[m], u[m], v[m] = 1, -z[m] / ax[m], -y[m] / ax[m]
    m = major_z & (z <= 0)
    face[m], u[m], v[m] = 2, -x[m] / az[m], -y[m] / az[m]
    m = major_x & (x <= 0)
    face[m], u[m], v[m] = 3, z[m] / ax[m], -y[m] / ax[m]
    m = major_y & (y > 0)
    face[m], u[m], v[m] = 4, x[m] / ay[m], z[m] / ay[m]
    m = major_y & (y <= 0)
    face[m], u[m], v[m] = 5, x[m] / ay[m], -z[m] / ay[m]
    return face, u, v


def cmp_to_erp(faces: np.ndarray, height: int, mode: str = "bilinear") -> np.ndarray:
    """Resample six (C, S, S) faces into a (C, height, 2*height) panorama."""
    faces = np.asarray(faces)
    if faces.ndim != 4 or faces.shape[0] != 6 or faces.shape[2] != faces.shape[3]:
        raise ValueError(f"faces must be (6, C, S, S), got shape {faces.shape}")
    if height < 2 or height % 2:
        raise ValueError(f"ERP height must be even and >= 2, got {height}")
    _, c, s, _ = faces.shape
    w = 2 * height
    lat = (0.5 - (np.arange(height) + 0.5) / height) * np.pi
    lon = ((np.arange(w) + 0.5) / w - 0.5) * 2 * np.pi
    lon, lat = np.meshgrid(lon, lat)
    d = np.stack([np.cos(lat) * np.sin(lon), np.sin(lat), np.cos(lat) * np.cos(lon)])
    face, u, v = _direction_to_face(d)
    col = (u + 1) * s / 2 - 0.5
    row = (v + 1) * s / 2 - 0.5
    if mode == "nearest":
        r = np.clip(np.floor(row + 0.5).astype(np.intp), 0, s - 1)
        cc = np.clip(np.floor(col + 0.5).astype(np.intp), 0, s - 1)
        out = faces[face, :, r, cc]
        out = np.moveaxis(out, -1, 0)
        return (out >= 0.5).astype(np.float64)
    row = np.clip(row, 0, s - 1)
    col = np.clip(col, 0, s - 1)
    r0 = np.floor(row).astype(np.intp)
    c0 = np.floor(col).astype(np.intp)
    r1 = np.minimum(r0 + 1, s - 1)
    c1 = np.minimum(c0 + 1, s - 1)
    rf = (row - r0)[..., None]
    cf = (col - c0)[..., None]
    top = faces[face, :, r0, c0] * (1 - cf) + faces[face, :, r0, c1] * cf
    bot = faces[face, :, r1, c0] * (1 - cf) + faces[face, :, r1, c1] * cf
    out = top * (1 - rf) + bot * rf
    return np.clip(np.moveaxis(out, -1, 0), 0.0, 1.0)


def stitch_side_faces(faces: np.ndarray) -> np.ndarray:
    """Concatenate the four side faces left to right: (..., 6, C, S, S) -> (..., C, S, 4S)."""
    faces = np.asarray(faces)
    return np.concatenate([faces[..., k, :, :, :] for k in range(SIDE_FACES)], axis=-1)


def split_side_strip(strip: np.ndarray) -> np.ndarray:
    """Inverse of :func:`stitch_side_faces`: (..., C, S, 4S) -> (..., 4, C, S, S)."""
    strip = np.asarray(strip)
    width = strip.shape[-1]
    if width % SIDE_FACES:
        raise ValueError(f"strip width {width} is not divisible by {SIDE_FACES}")
    return np.stack(np.split(strip, SIDE_FACES, axis=-1), axis=-4)


def latitude_band(height: int, max_deg: float) -> np.ndarray:
    """Boolean (H, 2H) mask of ERP rows with |latitude| < max_deg."""
    lat = (0.5 - (np.arange(height) + 0.5) / height) * 180.0
    return np.repeat((np.abs(lat) < max_deg)[:, None], 2 * height, axis=1)
