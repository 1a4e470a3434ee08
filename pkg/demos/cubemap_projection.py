"""Equirectangular panorama to cube faces and back."""

import numpy as np

from pano_gin import cmp_to_erp, erp_to_cmp, split_side_strip, stitch_side_faces
from pano_gin.cubemap import latitude_band
from pano_gin.data import synthetic_panorama
from pano_gin.metrics import psnr

pano = synthetic_panorama(128, np.random.default_rng(0))
print("panorama", pano.shape)

faces = erp_to_cmp(pano, 64)
print("faces", faces.shape)  # front, right, back, left, up, down

strip = stitch_side_faces(faces)
print("side strip", strip.shape)
assert np.array_equal(split_side_strip(strip), faces[:4])

back = cmp_to_erp(faces, 128)
band = np.broadcast_to(latitude_band(128, 75.0), pano.shape)
print(f"round trip PSNR inside 75 deg of the equator: {psnr(back, pano, where=band):.1f} dB")
print(f"whole sphere: {psnr(back, pano):.1f} dB")

# a quarter turn of yaw just relabels the side faces
turned = erp_to_cmp(np.roll(pano, -64, axis=2), 64)
print("yaw by 90 deg == face shift:", all(np.array_equal(turned[k], faces[(k + 1) % 4])
                                          for k in range(4)))
