"""Shared fixtures for tests: a hand-wired network and a small PNG dataset."""

import json
from fractions import Fraction

import numpy as np

from sparse_seg import data
from sparse_seg.cli import main
from sparse_seg.model import ArchitectureSpec, build_network


def rigged_network(base_channels=2, in_channels=1):
    """D=1 unet that predicts damage wherever channel 0 of the input exceeds 0.5.

    Only the skip path carries signal: enc1 thresholds the pixel, dec1 copies the
    skip channel and the head compares it with a constant.
    """
    net = build_network(ArchitectureSpec("unet", 1, base_channels, in_channels, 2))
    for v in net.params.values():
        v[...] = 0
    p = net.params
    p["enc1.conv1.weight"][0, 0, 1, 1] = 1.0
    p["enc1.conv1.bias"][0] = -0.5
    p["enc1.conv2.weight"][0, 0, 1, 1] = 1.0
    p["dec1.conv1.weight"][0, 0, 1, 1] = 1.0  # channel 0 of the (skip, up) concat
    p["dec1.conv2.weight"][0, 0, 1, 1] = 1.0
    p["head.weight"][1, 0, 0, 0] = 1.0
    p["head.bias"][0] = 0.2
    net.mark_updated()
    return net


def binary_dataset(root, n=4, shape=(20, 28), seed=0, channels=1):
    """PNG pairs whose image is 255 exactly on the mask; returns the manifest path."""
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n):
        mask = rng.random(shape) < 0.1
        image = np.repeat((mask * 255).astype(np.uint8)[None], channels, 0)
        data.write_image(root / f"im{k}.png", image)
        data.write_mask(root / f"im{k}_mask.png", mask)
        rows.append(f"im{k}.png,im{k}_mask.png\n")
    (root / "manifest.csv").write_text("image,mask\n" + "".join(rows))
    return root / "manifest.csv"


def scan_oracle(pred, truth, k=2):
    """Per-pixel set construction, independent of the confusion matrix."""
    h, w = truth.shape
    sets_p = {c: set() for c in range(k)}
    sets_t = {c: set() for c in range(k)}
    for y in range(h):
        for x in range(w):
            sets_p[int(pred[y, x])].add((y, x))
            sets_t[int(truth[y, x])].add((y, x))
    total = h * w
    iou, precision, recall = {}, {}, {}
    for c in range(k):
        inter = len(sets_p[c] & sets_t[c])
        union = len(sets_p[c] | sets_t[c])
        iou[c] = Fraction(inter, union) if union else None
        precision[c] = inter / len(sets_p[c]) if sets_p[c] else None
        recall[c] = inter / len(sets_t[c]) if sets_t[c] else None
    defined = [v for v in iou.values() if v is not None]
    miou = sum(defined) / len(defined)
    wiou = sum(Fraction(len(sets_t[c]), total) * iou[c] for c in range(k) if iou[c] is not None)
    correct = sum(len(sets_p[c] & sets_t[c]) for c in range(k))
    return iou, float(miou), float(wiou), precision, recall, correct / total


def pipeline_config(tmp_path, **optimizer):
    cfg = {
        "seed": 3,
        "architecture": {"kind": "unet", "depth": 2, "base_channels": 2, "in_channels": 1,
                         "num_classes": 2},
        "optimizer": {"kind": "rmsprop", "learning_rate": 1e-3, "minibatch": 4, "epochs": 2,
                      **optimizer},
        "patch": {"crop_size": 16, "patches_per_image": 3},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def run_pipeline(root, run):
    """patchify -> train -> eval -> predict into ``root/run``; returns the output dir."""
    manifest = binary_dataset(root) if not (root / "manifest.csv").exists() else root / "manifest.csv"
    cfg = pipeline_config(root)
    out = root / run
    assert main(["patchify", "--config", str(cfg), "--manifest", str(manifest),
                 "--out", str(out / "patches")]) == 0
    assert main(["train", "--config", str(cfg), "--patches", str(out / "patches"),
                 "--out", str(out / "model.weights"), "--loss-log", str(out / "loss.csv")]) == 0
    assert main(["eval", "--config", str(cfg), "--model", str(out / "model.weights"),
                 "--manifest", str(manifest), "--out", str(out / "eval")]) == 0
    assert main(["predict", "--config", str(cfg), "--model", str(out / "model.weights"),
                 "--manifest", str(manifest), "--out", str(out / "pred")]) == 0
    return out


def tree_bytes(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file()}
