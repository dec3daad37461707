"""Datasets on disk: manifests, mask decoding, splits, sparsity tables, patches."""

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

CLASS_NAMES = ("background", "damage (ROI)")
ROTATIONS = (0, 90, 180, 270)


class ManifestError(ValueError):
    pass


# ----------------------------------------------------------------------------
# image I/O

def read_image(path):
    """8-bit PNG (1 or 3 channels) as uint8 C x H x W."""
    with Image.open(path) as im:
        if im.mode in ("L", "P", "1", "I;16", "I"):
            arr = np.asarray(im.convert("L"))[None]
        else:
            arr = np.asarray(im.convert("RGB")).transpose(2, 0, 1)
    return np.ascontiguousarray(arr, dtype=np.uint8)


def read_mask(path):
    """Single-channel mask: 0 is background, any value >= 1 is damage."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L") if im.mode not in ("L", "1") else im)
    return (arr > 0).astype(np.uint8)


def write_image(path, chw):
    arr = np.asarray(chw, dtype=np.uint8)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    elif arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
    Image.fromarray(np.ascontiguousarray(arr)).save(path, format="PNG")


def write_mask(path, mask):
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path, format="PNG")


# ----------------------------------------------------------------------------
# manifest

@dataclass
class Manifest:
    root: Path
    pairs: list = field(default_factory=list)  # (image, mask) relative to root

    def __len__(self):
        return len(self.pairs)

    def paths(self, i):
        img, msk = self.pairs[i]
        return self.root / img, self.root / msk

    def load(self, i):
        img_path, mask_path = self.paths(i)
        return read_image(img_path), read_mask(mask_path)

    def subset(self, indices):
        return Manifest(self.root, [self.pairs[i] for i in indices])

    def save(self, path):
        """Write as CSV; paths are re-expressed relative to the new file's directory."""
        path = Path(path)
        base = path.parent.resolve()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image", "mask"])
            for i in range(len(self)):
                img, msk = self.paths(i)
                w.writerow([Path(os.path.relpath(img.resolve(), base)).as_posix(),
                            Path(os.path.relpath(msk.resolve(), base)).as_posix()])


def load_manifest(path, root=None, validate=True):
    """Read an ``image,mask`` CSV; paths are relative to ``root`` (default: the CSV's folder).

    Row numbers in errors count data rows from 1.
    """
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["image", "mask"]:
                raise ManifestError(f"{path}: header must be 'image,mask', got {reader.fieldnames}")
            pairs = [(r["image"].strip(), r["mask"].strip()) for r in reader]
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    if not pairs:
        raise ManifestError(f"{path}: empty manifest")
    manifest = Manifest(root, pairs)
    if validate:
        validate_manifest(manifest)
    return manifest


def validate_manifest(manifest):
    problems = []
    for i in range(len(manifest)):
        row = i + 1
        img_path, mask_path = manifest.paths(i)
        try:
            with Image.open(img_path) as im:
                im.load()
                img_size = im.size
            with Image.open(mask_path) as im:
                im.load()
                mask_size = im.size
        except FileNotFoundError as exc:
            problems.append(f"row {row}: missing file {exc.filename}")
            continue
        except OSError as exc:
            problems.append(f"row {row}: cannot decode ({exc})")
            continue
        if img_size != mask_size:
            problems.append(
                f"row {row}: image {img_size[0]}x{img_size[1]} and mask "
                f"{mask_size[0]}x{mask_size[1]} differ")
    if problems:
        raise ManifestError("; ".join(problems))


# ----------------------------------------------------------------------------
# sparsity statistics

@dataclass
class SparsityRow:
    name: str
    total: int
    mean_per_image: float
    percentage: float


def sparsity_table(roi_counts, pixel_counts):
    """Background / ROI / total rows from per-image ROI and pixel counts."""
    roi = int(np.sum(roi_counts, dtype=np.int64))
    total = int(np.sum(pixel_counts, dtype=np.int64))
    n = len(pixel_counts)
    if n == 0 or total == 0:
        raise ManifestError("no pixels to count")
    bg = total - roi
    return [SparsityRow(CLASS_NAMES[0], bg, bg / n, 100.0 * bg / total),
            SparsityRow(CLASS_NAMES[1], roi, roi / n, 100.0 * roi / total),
            SparsityRow("total", total, total / n, 100.0)]


def sparsity_stats(manifest):
    roi, pix = [], []
    for i in range(len(manifest)):
        mask = read_mask(manifest.paths(i)[1])
        roi.append(int(mask.sum()))
        pix.append(mask.size)
    return sparsity_table(roi, pix)


def format_sparsity(rows):
    lines = [f"{'class':<40}{'total pixels':>16}{'mean/image':>14}{'percent':>10}"]
    for r in rows:
        lines.append(f"{r.name:<40}{r.total:>16,}{round(r.mean_per_image):>14,}"
                     f"{r.percentage:>9.1f}%")
    return "\n".join(lines)


# ----------------------------------------------------------------------------
# split

def split(manifest, test_fraction=0.05, seed=0):
    """Seeded shuffle split; test gets ``max(1, round(N * fraction))`` pairs."""
    n = len(manifest)
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if n < 2:
        raise ManifestError(f"manifest too small to split: {n} pair(s)")
    n_test = max(1, math.floor(n * test_fraction + 0.5))
    n_test = min(n_test, n - 1)
    order = np.random.default_rng(seed).permutation(n)
    test = np.sort(order[:n_test])
    train = np.sort(order[n_test:])
    return manifest.subset(train), manifest.subset(test)


# ----------------------------------------------------------------------------
# patches

@dataclass(frozen=True)
class PatchSpec:
    crop_size: int = 224
    patches_per_image: int = 67
    rotations: tuple = ROTATIONS
    horizontal_flip: bool = True
    seed: int = 0
    min_roi_pixels: int = 0

    def __post_init__(self):
        if int(self.crop_size) != self.crop_size or self.crop_size < 1:
            raise ValueError(f"crop_size must be a positive integer, got {self.crop_size}")
        if int(self.patches_per_image) != self.patches_per_image or self.patches_per_image < 1:
            raise ValueError(
                f"patches_per_image must be a positive integer, got {self.patches_per_image}")
        rots = tuple(self.rotations)
        if not rots or any(r not in ROTATIONS for r in rots):
            raise ValueError(f"rotations must be a non-empty subset of {ROTATIONS}, got {rots}")
        object.__setattr__(self, "rotations", rots)


@dataclass(frozen=True)
class PatchTransform:
    image_index: int
    patch_index: int
    top: int
    left: int
    rotation: int
    flip: bool


@dataclass
class PatchSet:
    images: np.ndarray   # uint8 P x C x S x S
    masks: np.ndarray    # uint8 P x S x S
    transforms: list

    def __len__(self):
        return len(self.images)


def pad_to(arr, min_h, min_w, mode="reflect"):
    """Pad the trailing two axes (bottom/right) up to at least ``min_h`` x ``min_w``."""
    h, w = arr.shape[-2:]
    ph, pw = max(0, min_h - h), max(0, min_w - w)
    if not ph and not pw:
        return arr
    pad = [(0, 0)] * (arr.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(arr, pad, mode=mode)


def apply_transform(arr, t, crop_size):
    """Crop, rotate (counter-clockwise quarter turns) and optionally mirror ``arr`` (... x H x W)."""
    out = arr[..., t.top:t.top + crop_size, t.left:t.left + crop_size]
    out = np.rot90(out, k=t.rotation // 90, axes=(-2, -1))
    if t.flip:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def _draw(rng, spec, i, j, h, w):
    return PatchTransform(
        image_index=i, patch_index=j,
        top=int(rng.integers(0, h - spec.crop_size + 1)),
        left=int(rng.integers(0, w - spec.crop_size + 1)),
        rotation=int(spec.rotations[rng.integers(len(spec.rotations))]),
        flip=bool(rng.integers(2)) if spec.horizontal_flip else False)


def patchify_arrays(images, masks, spec, depth=None, max_tries=50):
    """Random crop/rotate/flip patches from in-memory images.

    ``images`` and ``masks`` are sequences of C x H x W and H x W arrays.  The
    transform for patch j of image i depends only on ``(spec.seed, i, j)``.
    """
    if depth is not None and spec.crop_size % 2 ** depth:
        log.warning("crop_size %d is not divisible by 2^%d; training will reject these patches",
                    spec.crop_size, depth)
    s = spec.crop_size
    out_img, out_mask, transforms = [], [], []
    for i, (img, mask) in enumerate(zip(images, masks)):
        img = pad_to(np.asarray(img), s, s)
        mask = pad_to(np.asarray(mask), s, s)
        h, w = mask.shape
        for j in range(spec.patches_per_image):
            rng = np.random.default_rng([spec.seed, i, j])
            t = _draw(rng, spec, i, j, h, w)
            m = apply_transform(mask, t, s)
            tries = 1
            while spec.min_roi_pixels and m.sum() < spec.min_roi_pixels and tries < max_tries:
                t = _draw(rng, spec, i, j, h, w)
                m = apply_transform(mask, t, s)
                tries += 1
            out_img.append(apply_transform(img, t, s))
            out_mask.append(m)
            transforms.append(t)
    if not out_img:
        raise ManifestError("no images to patchify")
    return PatchSet(np.stack(out_img).astype(np.uint8), np.stack(out_mask).astype(np.uint8),
                    transforms)


def patchify(manifest, spec, depth=None):
    """Patches for every pair in ``manifest``, ordered by (image, patch) index."""
    loaded = [manifest.load(i) for i in range(len(manifest))]
    return patchify_arrays([a for a, _ in loaded], [b for _, b in loaded], spec, depth)


def save_patches(patches, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(len(patches)):
        stem = f"patch_{k + 1:06d}"
        write_image(directory / f"{stem}_img.png", patches.images[k])
        write_mask(directory / f"{stem}_mask.png", patches.masks[k])
        rows.append((f"{stem}_img.png", f"{stem}_mask.png"))
    manifest = Manifest(directory, rows)
    manifest.save(directory / "patches.csv")
    return manifest


def load_patches(directory):
    """Reload a directory written by :func:`save_patches` as image/mask arrays."""
    manifest = load_manifest(Path(directory) / "patches.csv", validate=False)
    loaded = [manifest.load(i) for i in range(len(manifest))]
    return (np.stack([a for a, _ in loaded]), np.stack([b for _, b in loaded]))
