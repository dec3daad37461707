"""Layer primitives on dense NCHW arrays, each with an explicit backward.

Every forward returns ``(output, cache)``; the matching ``*_backward`` takes the
upstream gradient and that cache.  Nothing here mutates its inputs.

Arrays are plain :class:`numpy.ndarray` in float32 by default; pass float64
arrays when verifying gradients.
"""

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


def as_tensor(data, dtype=None):
    """Return ``data`` as a contiguous rank-4 array (N, C, H, W)."""
    arr = np.ascontiguousarray(data, dtype=dtype or DEFAULT_DTYPE)
    if arr.ndim != 4:
        raise ShapeError(f"expected a rank-4 NCHW tensor, got shape {arr.shape}")
    return arr


def _check_rank4(x, what="input"):
    if x.ndim != 4:
        raise ShapeError(f"{what} must be rank-4 NCHW, got shape {x.shape}")


def _check_finite(x, what="input"):
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{what} contains NaN or Inf")


# ----------------------------------------------------------------------------
# convolution

def _pad_amount(k, padding):
    if padding == "same":
        if k % 2 == 0:
            raise ShapeError(f"'same' padding needs an odd kernel size, got {k}")
        return k // 2
    if padding == "valid":
        return 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d(x, w, b, stride=1, padding="same"):
    """2-D cross-correlation of ``x`` (N, Cin, H, W) with ``w`` (Cout, Cin, k, k).

    Implemented as im2col followed by a batched matrix product.  With
    ``padding="same"`` and ``stride=1`` the spatial size is preserved
    (zero padding).
    """
    _check_rank4(x)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"kernels must be (Cout, Cin, k, k), got shape {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"input channels do not match kernels: input {x.shape}, kernels {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {b.shape} does not match kernels {w.shape}")
    if int(stride) != stride or stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride}")
    _check_finite(x)

    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    p = _pad_amount(k, padding)
    hp, wp = h + 2 * p, wd + 2 * p
    if p:
        # np.pad is slow for the many tiny tensors of gradient checks
        xp = np.zeros((n, cin, hp, wp), dtype=x.dtype)
        xp[:, :, p:p + h, p:p + wd] = x
    else:
        xp = x
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {w.shape} larger than padded input {xp.shape}")

    dtype = np.result_type(x, w)
    cols = np.empty((n, cin, k, k, ho, wo), dtype=dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(n, cin * k * k, ho * wo)
    wmat = w.reshape(cout, -1).astype(dtype, copy=False)
    y = np.matmul(wmat, cols)
    y += b.astype(dtype, copy=False)[None, :, None]
    cache = (cols, x.shape, w, stride, p, ho, wo)
    return y.reshape(n, cout, ho, wo), cache


def conv2d_backward(dy, cache):
    """Gradients of :func:`conv2d` with respect to input, kernels and bias."""
    cols, x_shape, w, stride, p, ho, wo = cache
    n, cin, h, wd = x_shape
    cout, _, k, _ = w.shape
    if dy.shape != (n, cout, ho, wo):
        raise ShapeError(
            f"upstream gradient {dy.shape} does not match conv output {(n, cout, ho, wo)}")
    dtype = cols.dtype
    dym = dy.reshape(n, cout, ho * wo).astype(dtype, copy=False)

    db = dym.sum(axis=(0, 2))
    dw = np.matmul(dym, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    wmat = w.reshape(cout, -1).astype(dtype, copy=False)
    dcols = np.matmul(wmat.T, dym).reshape(n, cin, k, k, ho, wo)

    dxp = np.zeros((n, cin, h + 2 * p, wd + 2 * p), dtype=dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
    dx = dxp[:, :, p:p + h, p:p + wd] if p else dxp
    return np.ascontiguousarray(dx), dw.astype(w.dtype, copy=False), db.astype(w.dtype, copy=False)


# ----------------------------------------------------------------------------
# pooling

def _windows(x):
    n, c, h, w = x.shape
    return (x.reshape(n, c, h // 2, 2, w // 2, 2)
             .transpose(0, 1, 2, 4, 3, 5)
             .reshape(n, c, h // 2, w // 2, 4))


def _unwindows(win):
    n, c, h2, w2, _ = win.shape
    return (win.reshape(n, c, h2, w2, 2, 2)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, 2 * h2, 2 * w2))


def maxpool2(x):
    """2x2 max pooling with stride 2.

    Returns the pooled tensor and the per-output argmax index within its
    window, numbered row-major (0 top-left, 1 top-right, 2 bottom-left,
    3 bottom-right).  Ties go to the first maximum in that order.
    """
    _check_rank4(x)
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"maxpool2 needs even height and width, got shape {x.shape}")
    win = _windows(x)
    idx = win.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def _scatter(values, indices):
    if values.shape != indices.shape:
        raise ShapeError(
            f"indices shape {indices.shape} does not match values shape {values.shape}")
    onehot = indices[..., None] == np.arange(4, dtype=indices.dtype)
    return _unwindows(np.where(onehot, values[..., None], values.dtype.type(0)))


def _gather(full, indices):
    win = _windows(full)
    if win.shape[:-1] != indices.shape:
        raise ShapeError(
            f"gradient shape {full.shape} is not twice the indices shape {indices.shape}")
    return np.take_along_axis(win, indices[..., None].astype(np.intp), axis=-1)[..., 0]


def maxpool2_backward(dy, indices):
    """Route the upstream gradient to the argmax positions."""
    return _scatter(dy, indices)


def max_unpool2(x, indices):
    """Place each value at its recorded window position; zeros elsewhere."""
    _check_rank4(x)
    return _scatter(x, indices)


def max_unpool2_backward(dy, indices):
    return np.ascontiguousarray(_gather(dy, indices))


# ----------------------------------------------------------------------------
# transposed convolution, 2x2 kernel, stride 2

def transposed_conv2(x, w, b):
    """Upsample by 2 with a stride-2 transposed convolution.

    ``w`` has shape (Cin, Cout, 2, 2); output pixel (2h+i, 2w+j) receives
    ``sum_c x[c, h, w] * w[c, :, i, j]`` plus bias.
    """
    _check_rank4(x)
    if w.ndim != 4 or w.shape[2:] != (2, 2):
        raise ShapeError(f"transposed_conv2 needs (Cin, Cout, 2, 2) kernels, got {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"input channels do not match kernels: input {x.shape}, kernels {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias shape {b.shape} does not match kernels {w.shape}")
    _check_finite(x)
    n, cin, h, wd = x.shape
    cout = w.shape[1]
    dtype = np.result_type(x, w)
    xm = x.transpose(0, 2, 3, 1).reshape(-1, cin).astype(dtype, copy=False)
    ym = xm @ w.reshape(cin, -1).astype(dtype, copy=False)
    y = (ym.reshape(n, h, wd, cout, 2, 2)
           .transpose(0, 3, 1, 4, 2, 5)
           .reshape(n, cout, 2 * h, 2 * wd))
    y = y + b.astype(dtype, copy=False)[None, :, None, None]
    return y, (xm, x.shape, w)


def transposed_conv2_backward(dy, cache):
    xm, x_shape, w = cache
    n, cin, h, wd = x_shape
    cout = w.shape[1]
    if dy.shape != (n, cout, 2 * h, 2 * wd):
        raise ShapeError(
            f"upstream gradient {dy.shape} does not match output {(n, cout, 2 * h, 2 * wd)}")
    dym = (dy.astype(xm.dtype, copy=False)
             .reshape(n, cout, h, 2, wd, 2)
             .transpose(0, 2, 4, 1, 3, 5)
             .reshape(-1, cout * 4))
    wmat = w.reshape(cin, -1).astype(xm.dtype, copy=False)
    dx = (dym @ wmat.T).reshape(n, h, wd, cin).transpose(0, 3, 1, 2)
    dw = (xm.T @ dym).reshape(w.shape)
    db = dym.reshape(-1, cout, 4).sum(axis=(0, 2))
    return np.ascontiguousarray(dx), dw.astype(w.dtype, copy=False), db.astype(w.dtype, copy=False)


# ----------------------------------------------------------------------------
# elementwise and structural

def relu(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    # subgradient at exactly 0 is 0
    return dy * mask


def concat_channels(a, b):
    """Stack along channels, ``a`` first."""
    _check_rank4(a, "first operand")
    _check_rank4(b, "second operand")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape}: N, H, W must match")
    return np.concatenate([a, b], axis=1), a.shape[1]


def concat_channels_backward(dy, split_at):
    return np.ascontiguousarray(dy[:, :split_at]), np.ascontiguousarray(dy[:, split_at:])


# ----------------------------------------------------------------------------
# loss

def log_softmax(logits, axis=1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(logits, axis=1):
    return np.exp(log_softmax(logits, axis=axis))


def softmax_cross_entropy(logits, labels, class_weights=None):
    """Pixel-mean (optionally class-weighted) softmax cross-entropy.

    ``loss = mean over N*H*W pixels of w[label] * -log softmax(logits)[label]``.
    Returns ``(loss, dlogits)`` where ``dlogits`` is the exact gradient.
    """
    _check_rank4(logits, "logits")
    n, k, h, w = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    bad = (labels < 0) | (labels >= k)
    if bad.any():
        pos = tuple(int(v) for v in np.argwhere(bad)[0])
        raise ValueError(
            f"label {labels[pos]} at pixel (n, y, x) = {pos} is outside 0..{k - 1}")
    if class_weights is None:
        weights = np.ones(k, dtype=logits.dtype)
    else:
        weights = np.asarray(class_weights, dtype=logits.dtype)
        if weights.shape != (k,) or not (weights > 0).all():
            raise ValueError(f"class_weights must be {k} positive values, got {class_weights}")
    _check_finite(logits, "logits")

    logp = log_softmax(logits)
    lab = labels.astype(np.intp)[:, None]
    picked = np.take_along_axis(logp, lab, axis=1)[:, 0]
    pix_w = weights[labels]
    count = n * h * w
    loss = float(-(pix_w * picked).sum(dtype=np.float64) / count)

    grad = np.exp(logp)
    onehot = np.arange(k)[None, :, None, None] == lab
    grad -= onehot
    grad *= (pix_w / count)[:, None]
    return loss, grad.astype(logits.dtype, copy=False)
