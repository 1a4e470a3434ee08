"""PSNR and SSIM on a few hand-built cases."""

import numpy as np

from pano_gin import psnr, ssim

grey = np.full((3, 32, 32), 0.5)
print(f"uniform error of 10/255: {psnr(grey, grey + 10 / 255):.2f} dB")
print(f"half that error:         {psnr(grey, grey + 5 / 255):.2f} dB")
print("identical images:", psnr(grey, grey), ssim(grey, grey))

rng = np.random.default_rng(0)
img = rng.random((3, 48, 48))
noisy = np.clip(img + rng.normal(0, 0.05, img.shape), 0, 1)
print(f"light noise: PSNR {psnr(noisy, img):.2f} dB, SSIM {ssim(noisy, img):.3f}")
print(f"inverted:    SSIM {ssim(1 - img, img):.3f}")
