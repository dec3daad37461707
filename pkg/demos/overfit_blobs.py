"""Train a small U-Net on twenty synthetic 64x64 images with 1-2% foreground.

Prints the training loss and the foreground/mean IoU on the training set,
then writes the comparison overlay of the first image to ``blobs_compare.png``.
"""

import time

import numpy as np

from sparse_seg import metrics, render
from sparse_seg.model import ArchitectureSpec, build_network, predict
from sparse_seg.optim import OptimizerConfig
from sparse_seg.synthetic import make_blob_dataset
from sparse_seg.train import as_float_images, train

images, masks = make_blob_dataset(20, 64, channels=1, seed=0)
print("foreground fraction per image:", np.round(masks.reshape(20, -1).mean(1), 4))

net = build_network(ArchitectureSpec("unet", depth=3, base_channels=8, in_channels=1), seed=0)
print(net.num_parameters(), "parameters")
x = as_float_images(images)


def report(it, loss, net):
    if it % 50 == 0:
        cm = metrics.confusion_matrix(predict(net, x), masks)
        print(f"iter {it:4d}  loss {loss:.4f}  fg IoU {metrics.iou_per_class(cm)[1]:.3f}  "
              f"mIoU {metrics.mean_iou(cm):.3f}")


t0 = time.time()
cfg = OptimizerConfig("rmsprop", learning_rate=1e-3, epochs=200)
train(net, images, masks, cfg, seed=0, callback=report)
print(f"{time.time() - t0:.0f} s")

pred = predict(net, x)
render.save_png("blobs_compare.png", render.overlay_comparison(images[0], pred[0], masks[0]))
print(render.count_colors(render.overlay_comparison(images[0], pred[0], masks[0])))
