"""Minibatch training loop with per-iteration loss logging."""

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .model import backward, forward
from .optim import STEPS, NonFiniteGradient, init_state

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingHistory:
    rows: list = field(default_factory=list)  # (epoch, iteration, loss)
    seconds: float = 0.0

    @property
    def losses(self):
        return np.array([r[2] for r in self.rows])

    @property
    def minutes(self):
        return self.seconds / 60.0


def iterations_per_epoch(num_patches, minibatch):
    # the last partial minibatch is kept
    return math.ceil(num_patches / minibatch)


def epoch_order(seed, epoch, n):
    return np.random.default_rng([seed, epoch]).permutation(n)


def as_float_images(images, dtype=np.float32):
    images = np.asarray(images)
    if images.dtype == np.uint8:
        return images.astype(dtype) / np.asarray(255, dtype=dtype)
    return images.astype(dtype, copy=False)


class LossLog:
    """``epoch,iteration,loss`` CSV, flushed after every row."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(["epoch", "iteration", "loss"])
        self._fh.flush()

    def write(self, epoch, iteration, loss):
        self._writer.writerow([epoch, iteration, repr(float(loss))])
        self._fh.flush()

    def close(self):
        self._fh.close()


def read_loss_log(path):
    with open(path, newline="") as fh:
        return [(int(r["epoch"]), int(r["iteration"]), float(r["loss"]))
                for r in csv.DictReader(fh)]


def train(net, images, masks, cfg, seed=0, class_weights=None, loss_log=None,
          callback=None):
    """Train ``net`` in place and return ``(net, history)``.

    ``images`` is N x C x H x W (uint8 is scaled to [0, 1]); ``masks`` is
    N x H x W class ids.  Patch order is reshuffled every epoch from
    ``(seed, epoch)``.  ``callback(iteration, loss, net)`` runs after each update.
    """
    images = np.asarray(images)
    masks = np.asarray(masks)
    n = len(images)
    if n == 0:
        raise TrainingError("empty patch set")
    if images.ndim != 4 or masks.shape != (n, *images.shape[2:]):
        raise T.ShapeError(
            f"images {images.shape} and masks {masks.shape} do not form a patch set")
    div = net.spec.divisor
    if images.shape[2] % div or images.shape[3] % div:
        raise T.ShapeError(
            f"patch size {images.shape[2]}x{images.shape[3]} is not divisible by "
            f"2^depth = {div}")

    step = STEPS[cfg.kind]
    state = init_state(net.params)
    per_epoch = iterations_per_epoch(n, cfg.minibatch)
    history = TrainingHistory()
    writer = LossLog(loss_log) if loss_log is not None else None
    start = time.perf_counter()
    iteration = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = epoch_order(seed, epoch, n)
            for b in range(per_epoch):
                iteration += 1
                idx = order[b * cfg.minibatch:(b + 1) * cfg.minibatch]
                x = as_float_images(images[idx], net.dtype)
                logits, tape = forward(net, x, record=True)
                try:
                    loss, dlogits = T.softmax_cross_entropy(logits, masks[idx], class_weights)
                except T.NonFiniteError:
                    raise TrainingError(
                        f"non-finite logits at epoch {epoch}, iteration {iteration}") from None
                if not math.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, iteration {iteration}")
                grads = backward(net, tape, dlogits)
                try:
                    step(net.params, grads, state, cfg)
                except NonFiniteGradient as exc:
                    raise TrainingError(f"{exc} at iteration {iteration}") from None
                net.mark_updated()
                history.rows.append((epoch, iteration, loss))
                if writer:
                    writer.write(epoch, iteration, loss)
                if callback:
                    callback(iteration, loss, net)
            log.debug("epoch %d done, last loss %.6f", epoch, history.rows[-1][2])
    finally:
        if writer:
            writer.close()
        history.seconds = time.perf_counter() - start
    return net, history
