"""RMSProp vs SGD with momentum at learning rate 1e-5 on the blob task.

Foreground IoU is printed every 200 steps.  At this rate RMSProp first learns
the class prior (foreground disappears), then recovers the blobs after about a
thousand steps; SGDM barely moves from its initial prediction.  Takes a while:
pass a smaller epoch count as the first argument for a quick look.
"""

import sys

from sparse_seg import metrics
from sparse_seg.model import ArchitectureSpec, build_network, predict
from sparse_seg.optim import OptimizerConfig
from sparse_seg.synthetic import make_blob_dataset
from sparse_seg.train import as_float_images, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 800
seed = 0
images, masks = make_blob_dataset(20, 64, 1, seed=seed)
x = as_float_images(images)

for kind in ("rmsprop", "sgdm"):
    net = build_network(ArchitectureSpec("unet", 3, 8, 1, 2), seed=seed)
    trace = []

    def probe(it, loss, net):
        if it % 200 == 0:
            pred = predict(net, x)
            trace.append((it, metrics.iou_per_class(metrics.confusion_matrix(pred, masks))[1],
                          int(pred.sum())))

    train(net, images, masks, OptimizerConfig(kind, 1e-5, epochs=epochs), seed=seed,
          callback=probe)
    print(kind)
    for it, iou, n_fg in trace:
        print(f"  step {it:5d}  fg IoU {iou:.4f}  predicted fg pixels {n_fg}")
