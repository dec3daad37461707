"""Prediction overlays and prediction-vs-truth comparison images (8-bit RGB).

Comparison colors are fixed: true positive white, false positive green,
false negative magenta; true negatives show the source in grayscale.
"""

from dataclasses import dataclass

import numpy as np
from PIL import Image

WHITE = (255, 255, 255)
GREEN = (0, 255, 0)
MAGENTA = (255, 0, 255)


@dataclass(frozen=True)
class OverlayStyle:
    tint: tuple = (255, 0, 0)
    opacity: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.opacity <= 1.0:
            raise ValueError(f"opacity must be in [0, 1], got {self.opacity}")
        if len(self.tint) != 3 or any(not 0 <= c <= 255 for c in self.tint):
            raise ValueError(f"tint must be an 8-bit RGB triple, got {self.tint}")


def to_rgb(image):
    """Accept H x W or C x H x W (C in 1, 3) uint8; return H x W x 3."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise ValueError(f"expected an 8-bit image, got dtype {img.dtype}")
    if img.ndim == 2:
        img = img[None]
    if img.ndim == 3 and img.shape[0] == 1:
        return np.repeat(img[0][:, :, None], 3, axis=2)
    if img.ndim == 3 and img.shape[0] == 3:
        return np.ascontiguousarray(img.transpose(1, 2, 0))
    raise ValueError(f"cannot interpret image of shape {np.shape(image)} as C x H x W")


def _check_dims(rgb, *masks):
    for m in masks:
        if np.shape(m) != rgb.shape[:2]:
            raise ValueError(f"mask shape {np.shape(m)} does not match image {rgb.shape[:2]}")


def _round_half_up(x):
    return np.floor(x + 0.5).astype(np.uint8)


def grayscale(rgb):
    """ITU-R 601 luma, rounded half up, capped at 254 so white stays reserved."""
    coeff = np.array([0.299, 0.587, 0.114])
    g = np.minimum(_round_half_up(rgb.astype(np.float64) @ coeff), 254)
    return np.repeat(g[:, :, None], 3, axis=2)


def overlay_prediction(image, pred, style=OverlayStyle()):
    rgb = to_rgb(image)
    _check_dims(rgb, pred)
    out = rgb.copy()
    fg = np.asarray(pred) > 0
    a = style.opacity
    blended = _round_half_up(a * np.asarray(style.tint, dtype=np.float64)
                             + (1.0 - a) * rgb[fg].astype(np.float64))
    out[fg] = blended
    return out


def comparison_masks(pred, truth):
    pred = np.asarray(pred) > 0
    truth = np.asarray(truth) > 0
    return pred & truth, pred & ~truth, ~pred & truth, ~pred & ~truth


def overlay_comparison(image, pred, truth):
    rgb = to_rgb(image)
    _check_dims(rgb, pred, truth)
    tp, fp, fn, _ = comparison_masks(pred, truth)
    out = grayscale(rgb)
    out[tp] = WHITE
    out[fp] = GREEN
    out[fn] = MAGENTA
    return out


def count_colors(rgb):
    """Pixel counts of the three fixed comparison colors."""
    rgb = np.asarray(rgb)
    return {name: int(np.all(rgb == np.array(color, dtype=np.uint8), axis=-1).sum())
            for name, color in (("white", WHITE), ("green", GREEN), ("magenta", MAGENTA))}


def save_png(path, rgb):
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(path, format="PNG")
