"""Central finite-difference verification of analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


def numeric_gradient(f, x, rel_step=1e-4):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place).

    The step for element i is ``rel_step * max(1, |x_i|)``.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = rel_step * max(1.0, abs(float(orig)))
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    """``||a - n|| / max(||a||, ||n||)``, defined as 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


@dataclass
class GradCheckReport:
    op: str
    tolerance: float
    errors: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)  # coordinates excluded at kinks

    @property
    def failures(self):
        return {k: v for k, v in self.errors.items() if not v <= self.tolerance}

    @property
    def passed(self):
        return not self.failures

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _distinct(rng, shape):
    # well separated values keep maxpool argmax stable under perturbation
    size = int(np.prod(shape))
    return (rng.permutation(size).reshape(shape) * 0.05 + rng.uniform(-0.01, 0.01, shape))


# Each op: default sizes, input builder, forward(inputs) -> output,
# backward(dout, inputs) -> {group: grad}.

def _conv_inputs(rng, sizes):
    cin_shape = sizes["input"]
    kshape = sizes["kernels"]
    return {"input": rng.standard_normal(cin_shape),
            "kernels": rng.standard_normal(kshape),
            "bias": rng.standard_normal(kshape[0])}


def _conv_fwd(inp, sizes):
    return T.conv2d(inp["input"], inp["kernels"], inp["bias"],
                    stride=sizes.get("stride", 1), padding=sizes.get("padding", "same"))


def _conv_bwd(dy, cache):
    dx, dw, db = T.conv2d_backward(dy, cache)
    return {"input": dx, "kernels": dw, "bias": db}


def _tconv_inputs(rng, sizes):
    kshape = sizes["kernels"]
    return {"input": rng.standard_normal(sizes["input"]),
            "kernels": rng.standard_normal(kshape),
            "bias": rng.standard_normal(kshape[1])}


def _tconv_fwd(inp, sizes):
    return T.transposed_conv2(inp["input"], inp["kernels"], inp["bias"])


def _tconv_bwd(dy, cache):
    dx, dw, db = T.transposed_conv2_backward(dy, cache)
    return {"input": dx, "kernels": dw, "bias": db}


def _pool_fwd(inp, sizes):
    return T.maxpool2(inp["input"])


def _pool_bwd(dy, idx):
    return {"input": T.maxpool2_backward(dy, idx)}


def _unpool_inputs(rng, sizes):
    n, c, h, w = sizes["input"]
    _, idx = T.maxpool2(_distinct(rng, (n, c, 2 * h, 2 * w)))
    return {"input": rng.standard_normal((n, c, h, w)), "_indices": idx}


def _unpool_fwd(inp, sizes):
    return T.max_unpool2(inp["input"], inp["_indices"]), inp["_indices"]


def _unpool_bwd(dy, idx):
    return {"input": T.max_unpool2_backward(dy, idx)}


def _relu_bwd(dy, mask):
    return {"input": T.relu_backward(dy, mask)}


def _concat_inputs(rng, sizes):
    return {"a": rng.standard_normal(sizes["a"]), "b": rng.standard_normal(sizes["b"])}


def _concat_bwd(dy, split):
    da, db = T.concat_channels_backward(dy, split)
    return {"a": da, "b": db}


def _ce_inputs(rng, sizes):
    n, k, h, w = sizes["logits"]
    out = {"logits": rng.standard_normal((n, k, h, w)),
           "_labels": rng.integers(0, k, size=(n, h, w))}
    if sizes.get("weighted"):
        out["_weights"] = rng.uniform(0.5, 2.0, size=k)
    return out


def _ce_fwd(inp, sizes):
    loss, grad = T.softmax_cross_entropy(inp["logits"], inp["_labels"], inp.get("_weights"))
    return np.float64(loss), grad


def _ce_bwd(dy, grad):
    return {"logits": dy * grad}


OPS = {
    "conv2d": ({"input": (1, 2, 5, 5), "kernels": (3, 2, 3, 3)}, _conv_inputs, _conv_fwd, _conv_bwd),
    "maxpool2": ({"input": (1, 1, 4, 4)},
                 lambda rng, s: {"input": _distinct(rng, s["input"])}, _pool_fwd, _pool_bwd),
    "max_unpool2": ({"input": (1, 2, 3, 3)}, _unpool_inputs, _unpool_fwd, _unpool_bwd),
    "transposed_conv2": ({"input": (1, 3, 3, 3), "kernels": (3, 2, 2, 2)},
                         _tconv_inputs, _tconv_fwd, _tconv_bwd),
    "relu": ({"input": (1, 2, 4, 4)},
             lambda rng, s: {"input": _away_from_zero(rng, s["input"])},
             lambda inp, s: T.relu(inp["input"]), _relu_bwd),
    "concat_channels": ({"a": (1, 2, 4, 4), "b": (1, 3, 4, 4)}, _concat_inputs,
                        lambda inp, s: T.concat_channels(inp["a"], inp["b"]), _concat_bwd),
    "softmax_cross_entropy": ({"logits": (1, 2, 4, 4)}, _ce_inputs, _ce_fwd, _ce_bwd),
}


def finite_difference_check(op, sizes=None, tolerance=1e-3, seed=0, inputs=None,
                            backward=None):
    """Compare an op's analytic backward against central differences.

    The scalar probed is ``sum(output * R)`` for a fixed random ``R`` (the loss
    itself for ``softmax_cross_entropy``).  ``inputs`` overrides the random
    inputs; ``backward`` overrides the op's backward, e.g. to check that a
    broken gradient is caught.  Returns a :class:`GradCheckReport` with one
    relative error per input group.  Always runs in float64.
    """
    if op not in OPS:
        raise KeyError(f"unknown op {op!r}; choose from {sorted(OPS)}")
    default_sizes, make_inputs, fwd, bwd = OPS[op]
    sizes = {**default_sizes, **(sizes or {})}
    rng = np.random.default_rng(seed)
    if inputs is None:
        inputs = make_inputs(rng, sizes)
    inputs = {k: (np.array(v, dtype=np.float64) if not k.startswith("_") else v)
              for k, v in inputs.items()}
    bwd = backward or bwd

    out, cache = fwd(inputs, sizes)
    scalar_output = np.ndim(out) == 0
    probe = np.float64(1.0) if scalar_output else rng.standard_normal(np.shape(out))

    def objective():
        o, _ = fwd(inputs, sizes)
        return float(np.sum(o * probe))

    analytic = bwd(probe, cache)
    report = GradCheckReport(op=op, tolerance=tolerance)
    for name, value in inputs.items():
        if name.startswith("_"):
            continue
        numeric = numeric_gradient(objective, value)
        report.errors[name] = relative_error(analytic[name], numeric)
    return report


def _activation_pattern(tape):
    parts = []
    for key, value in tape.records.items():
        if key == "pool_indices":
            parts += [idx.tobytes() for _, idx in sorted(value.items())]
        elif isinstance(value, tuple) and len(value) == 2 and getattr(value[1], "dtype", None) == bool:
            parts.append(np.packbits(value[1]).tobytes())
    return b"".join(parts)


def network_gradient_check(net, batch, labels, tolerance=1e-3, class_weights=None,
                           rel_step=1e-4):
    """Check every parameter gradient of ``net`` under pixel-mean cross-entropy.

    ``net`` should hold float64 parameters (see :meth:`Network.astype`).
    Coordinates whose +-h perturbation changes any relu mask or pooling argmax
    straddle a kink, where the loss is not differentiable; they are left out
    of the comparison and counted in ``report.skipped``.  With the default
    zero biases whole regions sit exactly on a kink, so use :func:`kink_free`
    first.
    """
    from .model import backward, forward

    batch = np.asarray(batch, dtype=net.dtype)

    def evaluate():
        logits, tape = forward(net, batch, record=True)
        loss = T.softmax_cross_entropy(logits, labels, class_weights)[0]
        return loss, _activation_pattern(tape)

    logits, tape = forward(net, batch, record=True)
    _, dlogits = T.softmax_cross_entropy(logits, labels, class_weights)
    analytic = backward(net, tape, dlogits)
    base = _activation_pattern(tape)
    report = GradCheckReport(op=f"network:{net.spec.kind}", tolerance=tolerance)
    for name, value in net.params.items():
        flat = value.reshape(-1)
        numeric = np.zeros(flat.size)
        keep = np.ones(flat.size, dtype=bool)
        for i in range(flat.size):
            orig = flat[i]
            h = rel_step * max(1.0, abs(float(orig)))
            flat[i] = orig + h
            fp, pp = evaluate()
            flat[i] = orig - h
            fm, pm = evaluate()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2 * h)
            keep[i] = pp == base and pm == base
        report.errors[name] = relative_error(analytic[name].reshape(-1)[keep], numeric[keep])
        report.skipped[name] = int((~keep).sum())
    return report


def kink_free(net, seed=0, low=0.05, high=0.3):
    """Float64 copy of ``net`` with biases drawn away from zero."""
    rng = np.random.default_rng(seed)
    out = net.astype(np.float64)
    for name, value in out.params.items():
        if name.endswith(".bias"):
            value[...] = rng.uniform(low, high, value.shape) * rng.choice([-1.0, 1.0], value.shape)
    return out
