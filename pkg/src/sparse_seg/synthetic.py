"""Synthetic sparse-damage images: textured gray background with a few dark blobs.

Used by tests, demos and the acceptance experiments in place of real
inspection photos.  Foreground covers 1-2% of the pixels by default, about
as sparse as damage in typical close-up inspection shots.
"""

import numpy as np


def _smooth_noise(rng, h, w, scale=8):
    coarse = rng.standard_normal((h // scale + 2, w // scale + 2))
    ys = np.linspace(0, coarse.shape[0] - 1.001, h)
    xs = np.linspace(0, coarse.shape[1] - 1.001, w)
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    c = coarse
    return ((1 - fy) * (1 - fx) * c[y0][:, x0] + fy * (1 - fx) * c[y0 + 1][:, x0]
            + (1 - fy) * fx * c[y0][:, x0 + 1] + fy * fx * c[y0 + 1][:, x0 + 1])


def blob_mask(rng, h, w, fg_range=(0.01, 0.02), max_blobs=2, tries=1000):
    """Binary mask of 1..max_blobs ellipses whose total area lies in ``fg_range``."""
    yy, xx = np.mgrid[0:h, 0:w]
    lo, hi = fg_range
    for _ in range(tries):
        mask = np.zeros((h, w), dtype=bool)
        for _ in range(rng.integers(1, max_blobs + 1)):
            cy, cx = rng.uniform(4, h - 4), rng.uniform(4, w - 4)
            ay, ax = rng.uniform(1.5, 0.12 * h), rng.uniform(1.5, 0.12 * w)
            theta = rng.uniform(0, np.pi)
            dy, dx = yy - cy, xx - cx
            u = dy * np.cos(theta) + dx * np.sin(theta)
            v = -dy * np.sin(theta) + dx * np.cos(theta)
            mask |= (u / ay) ** 2 + (v / ax) ** 2 <= 1.0
        frac = mask.mean()
        if lo <= frac <= hi:
            return mask.astype(np.uint8)
    raise RuntimeError(f"could not place blobs covering {fg_range} of a {h}x{w} image")


def make_blob_dataset(n=20, size=64, channels=1, fg_range=(0.01, 0.02), seed=0):
    """Return ``(images, masks)``: uint8 N x C x H x W and uint8 N x H x W in {0, 1}."""
    rng = np.random.default_rng(seed)
    size = (size, size) if np.isscalar(size) else tuple(size)
    h, w = size
    images = np.empty((n, channels, h, w), dtype=np.uint8)
    masks = np.empty((n, h, w), dtype=np.uint8)
    for i in range(n):
        mask = blob_mask(rng, h, w, fg_range)
        base = 0.58 + 0.06 * _smooth_noise(rng, h, w)
        tint = np.array([1.0, 0.97, 0.93][:channels] + [1.0] * max(0, channels - 3))
        img = base[None] * tint[:, None, None]
        img = img + 0.03 * rng.standard_normal((channels, h, w))
        # rust-brown, darker than the concrete around it
        rust = np.array([0.45, 0.25, 0.15][:channels] + [0.3] * max(0, channels - 3))
        if channels == 1:
            rust = np.array([0.28])
        img = np.where(mask[None] > 0, rust[:, None, None] + 0.04 * rng.standard_normal((channels, h, w)), img)
        images[i] = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)
        masks[i] = mask
    return images, masks
