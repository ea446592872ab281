"""Undersampling a phantom in k-space and looking at the damage.

Run with ``python demos/01_kspace_aliasing.py``.
"""

import numpy as np

from evorecon import kspace as ks
from evorecon import metrics as me

# a single 64x64 ellipse phantom
img = ks.generate_phantoms(1, 64, seed=3)[0]
print("phantom", img.shape, "range %.3f .. %.3f" % (img.min(), img.max()))

# the orthonormal FFT keeps energy, so the norms agree
spec = ks.fft2(img.astype(complex))
print("image norm %.6f, spectrum norm %.6f" % (np.linalg.norm(img), np.linalg.norm(spec)))

# uniform mask: every 4th phase-encode row plus a block of centre rows
for rows in (64, 256):
    m = ks.make_uniform_mask(rows, 4, 0.04)
    print(f"rows={rows:3d} kept={m.kept:3d} acceleration={m.effective_acceleration:.4f}")

# the centre rows are what make it less than 4X
m0 = ks.make_uniform_mask(64, 4, 0.0)
print("no centre rows:", m0.effective_acceleration)

# draw the keep vector, centred order, DC in the middle
mask = ks.make_uniform_mask(64, 4, 0.04)
print("".join("#" if k else "." for k in mask.keep))

# zero-filled reconstruction of the phantom
pair = ks.degrade(img, mask)
print("aliased vs truth: mse %.5f  ssim %.3f  psnr %.2f dB" % (
    me.mse(pair.target, pair.aliased), me.ssim(pair.target, pair.aliased),
    me.psnr(pair.target, pair.aliased)))

# a point source makes the aliasing obvious: copies every rows/4 pixels
delta = np.zeros((16, 16))
delta[5, 9] = 1.0
ghost = ks.degrade(delta, ks.make_uniform_mask(16, 4, 0.0)).aliased
print("rows holding energy in column 9:", np.flatnonzero(ghost[:, 9] > 1e-9).tolist(),
      "amplitude", round(float(ghost[5, 9]), 6))

# variable-density random mask, same row budget
rmask = ks.make_random_mask(64, 4, 0.04, seed=1)
print("".join("#" if k else "." for k in rmask.keep))
rpair = ks.degrade(img, rmask)
print("random mask: mse %.5f" % me.mse(rpair.target, rpair.aliased))
