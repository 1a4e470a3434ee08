"""Overfit the two-stage model on a handful of synthetic panoramas.

Takes about a minute per hundred steps on one core.
"""

import sys

import numpy as np

from pano_gin import TrainConfig, Trainer, inpaint
from pano_gin.masks import MaskSpec, sample_mask
from pano_gin.metrics import psnr

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 100
trainer = Trainer(TrainConfig(face_size=32, channels=16, num_images=4, steps=steps, seed=0))

def show(step, r):
    if step % 20 == 0:
        print(f"step {step:4d}  l1_mask {r.l1_mask:.4f}  d_wgan {r.d_wgan:+.3f}  gp {r.gp:.3f}")

reports = trainer.run(steps, callback=show)
l1 = np.array([r.l1_mask for r in reports])
print(f"l1_mask first 10: {l1[:10].mean():.4f}  last 10: {l1[-10:].mean():.4f}")

faces = trainer.faces[:1]
mask = sample_mask(MaskSpec(0.1, 0.2), 32, np.random.default_rng(5))[None, :, None]
out = inpaint(trainer.model, faces, mask)
hole = np.broadcast_to(mask > 0, out.shape)
print(f"PSNR on the hole: {psnr(out, faces, where=hole):.2f} dB")
