"""Encoder-decoder segmentation networks built from :mod:`sparse_seg.tensor` ops.

Two families share the encoder and bottleneck:

* ``unet`` -- decoder upsamples with a 2x2 transposed convolution and
  concatenates the encoder skip tensor before its two 3x3 convolutions.
* ``segnet-lite`` -- decoder reduces channels with a 3x3 convolution, then
  max-unpools with the indices recorded by the matching encoder pool.

Parameters live in an ordered ``dict`` of named arrays on :class:`Network`.
"""

import hashlib
import itertools
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T

KINDS = ("unet", "segnet-lite")
FORMAT_MAGIC = "SPARSESEG-WEIGHTS"
FORMAT_VERSION = 1


class WeightsFormatError(ValueError):
    pass


class TapeError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: str = "unet"
    depth: int = 5
    base_channels: int = 64
    in_channels: int = 3
    num_classes: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        for name, low in (("depth", 1), ("base_channels", 1), ("in_channels", 1),
                          ("num_classes", 2)):
            value = getattr(self, name)
            if int(value) != value or value < low:
                raise ValueError(f"{name} must be an integer >= {low}, got {value!r}")

    @property
    def divisor(self):
        return 2 ** self.depth

    def channels(self, level):
        """Feature width at encoder level ``level`` (1-based); ``depth + 1`` is the bottleneck."""
        return self.base_channels * 2 ** (level - 1)


def parameter_shapes(spec):
    """Ordered ``(name, shape)`` pairs for every weight and bias of ``spec``."""
    shapes = []

    def conv(name, cin, cout, k=3):
        shapes.append((f"{name}.weight", (cout, cin, k, k)))
        shapes.append((f"{name}.bias", (cout,)))

    cin = spec.in_channels
    for d in range(1, spec.depth + 1):
        c = spec.channels(d)
        conv(f"enc{d}.conv1", cin, c)
        conv(f"enc{d}.conv2", c, c)
        cin = c
    cb = spec.channels(spec.depth + 1)
    conv("bottleneck.conv1", cin, cb)
    conv("bottleneck.conv2", cb, cb)
    cin = cb
    for d in range(spec.depth, 0, -1):
        c = spec.channels(d)
        if spec.kind == "unet":
            shapes.append((f"dec{d}.up.weight", (cin, c, 2, 2)))
            shapes.append((f"dec{d}.up.bias", (c,)))
            conv(f"dec{d}.conv1", 2 * c, c)
        else:
            conv(f"dec{d}.reduce", cin, c)
            conv(f"dec{d}.conv1", c, c)
        conv(f"dec{d}.conv2", c, c)
        cin = c
    conv("head", cin, spec.num_classes, k=1)
    return shapes


def _fan_in(name, shape):
    if name.endswith(".up.weight"):
        # transposed conv: each output pixel sees Cin inputs through one tap
        return shape[0]
    return int(np.prod(shape[1:]))


_net_ids = itertools.count()


class Network:
    """A realized architecture: spec plus ordered named parameters."""

    def __init__(self, spec, params):
        expected = parameter_shapes(spec)
        if [n for n, _ in expected] != list(params):
            raise ValueError("parameter names do not match the architecture")
        for name, shape in expected:
            if params[name].shape != shape:
                raise ValueError(f"parameter {name}: expected shape {shape}, "
                                 f"got {params[name].shape}")
        self.spec = spec
        self.params = params
        self.uid = next(_net_ids)
        self.version = 0

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def num_parameters(self):
        return sum(p.size for p in self.params.values())

    def layer_counts(self):
        """Counts of convolutions, pools, unpool/upsampling steps and activations."""
        d = self.spec.depth
        convs = 2 * d + 2 + 2 * d + (d if self.spec.kind == "segnet-lite" else 0) + 1
        upsamples = d
        activations = convs - 1
        return {"convs": convs, "pools": d, "upsamples": upsamples,
                "activations": activations}

    def astype(self, dtype):
        return Network(self.spec, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self):
        return Network(self.spec, {k: v.copy() for k, v in self.params.items()})

    def mark_updated(self):
        """Invalidate tapes recorded before an in-place parameter update."""
        self.version += 1

    def forward(self, batch, record=False):
        return forward(self, batch, record)

    def backward(self, tape, dlogits):
        return backward(self, tape, dlogits)

    def __repr__(self):
        s = self.spec
        return (f"Network(kind={s.kind!r}, depth={s.depth}, base_channels={s.base_channels}, "
                f"params={self.num_parameters()})")


def build_network(spec, seed=0, dtype=np.float32):
    """He-initialized network: weights ~ N(0, 2/fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(spec):
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            std = np.sqrt(2.0 / _fan_in(name, shape))
            params[name] = (rng.standard_normal(shape) * std).astype(dtype)
    return Network(spec, params)


# ----------------------------------------------------------------------------
# execution

class Tape:
    __slots__ = ("net_uid", "version", "shape", "records")

    def __init__(self, net, shape):
        self.net_uid = net.uid
        self.version = net.version
        self.shape = shape
        self.records = {}


def _check_input(net, batch):
    spec = net.spec
    if batch.ndim != 4:
        raise T.ShapeError(f"batch must be N x C x H x W, got shape {batch.shape}")
    if batch.shape[1] != spec.in_channels:
        raise T.ShapeError(
            f"batch has {batch.shape[1]} channels, network expects {spec.in_channels}")
    h, w = batch.shape[2:]
    if h % spec.divisor or w % spec.divisor:
        raise T.ShapeError(
            f"spatial size {h}x{w} is not divisible by 2^depth = {spec.divisor}")


def forward(net, batch, record=False):
    """Run the network; returns ``(logits, tape)`` (``tape`` is None unless ``record``)."""
    _check_input(net, batch)
    p = net.params
    spec = net.spec
    x = np.ascontiguousarray(batch, dtype=net.dtype)
    tape = Tape(net, x.shape) if record else None
    rec = tape.records if record else None

    def conv_relu(name, h):
        y, c = T.conv2d(h, p[f"{name}.weight"], p[f"{name}.bias"])
        y, mask = T.relu(y)
        if record:
            rec[name] = (c, mask)
        return y

    h = x
    skips = {}
    indices = {}
    for d in range(1, spec.depth + 1):
        h = conv_relu(f"enc{d}.conv1", h)
        h = conv_relu(f"enc{d}.conv2", h)
        skips[d] = h
        h, indices[d] = T.maxpool2(h)
    if record:
        rec["pool_indices"] = indices
    h = conv_relu("bottleneck.conv1", h)
    h = conv_relu("bottleneck.conv2", h)
    for d in range(spec.depth, 0, -1):
        if spec.kind == "unet":
            up, c = T.transposed_conv2(h, p[f"dec{d}.up.weight"], p[f"dec{d}.up.bias"])
            h, split = T.concat_channels(skips[d], up)
            if record:
                rec[f"dec{d}.up"] = (c, split)
        else:
            h = conv_relu(f"dec{d}.reduce", h)
            h = T.max_unpool2(h, indices[d])
        h = conv_relu(f"dec{d}.conv1", h)
        h = conv_relu(f"dec{d}.conv2", h)
    logits, c = T.conv2d(h, p["head.weight"], p["head.bias"], padding="valid")
    if record:
        rec["head"] = c
    return logits, tape


def backward(net, tape, dlogits):
    """Parameter gradients for the scalar whose logit gradient is ``dlogits``."""
    if tape is None or tape.net_uid != net.uid or tape.version != net.version:
        raise TapeError("tape was not recorded by this network at its current parameters")
    spec = net.spec
    rec = tape.records
    n, _, h, w = tape.shape
    expected = (n, spec.num_classes, h, w)
    if dlogits.shape != expected:
        raise T.ShapeError(f"dlogits shape {dlogits.shape} does not match logits {expected}")
    grads = {}

    def conv_relu_back(name, dy):
        c, mask = rec[name]
        dx, dw, db = T.conv2d_backward(T.relu_backward(dy, mask), c)
        grads[f"{name}.weight"] = dw
        grads[f"{name}.bias"] = db
        return dx

    dh, grads["head.weight"], grads["head.bias"] = T.conv2d_backward(
        np.asarray(dlogits, dtype=net.dtype), rec["head"])
    indices = rec["pool_indices"]
    dskips = {}
    for d in range(1, spec.depth + 1):
        dh = conv_relu_back(f"dec{d}.conv2", dh)
        dh = conv_relu_back(f"dec{d}.conv1", dh)
        if spec.kind == "unet":
            c, split = rec[f"dec{d}.up"]
            dskips[d], dup = T.concat_channels_backward(dh, split)
            dh, grads[f"dec{d}.up.weight"], grads[f"dec{d}.up.bias"] = \
                T.transposed_conv2_backward(dup, c)
        else:
            dh = T.max_unpool2_backward(dh, indices[d])
            dh = conv_relu_back(f"dec{d}.reduce", dh)
    dh = conv_relu_back("bottleneck.conv2", dh)
    dh = conv_relu_back("bottleneck.conv1", dh)
    for d in range(spec.depth, 0, -1):
        dh = T.maxpool2_backward(dh, indices[d])
        if d in dskips:
            dh = dh + dskips[d]
        dh = conv_relu_back(f"enc{d}.conv2", dh)
        dh = conv_relu_back(f"enc{d}.conv1", dh)
    return {name: grads[name] for name in net.params}


def predict(net, batch):
    """Per-pixel argmax class (ties to the lowest index), shape N x H x W."""
    logits, _ = forward(net, batch)
    return logits.argmax(axis=1).astype(np.uint8)


# ----------------------------------------------------------------------------
# weights file
#
# text header, one "key value" per line, then the parameter table, then a
# line "end"; payload is little-endian float32 in table order.

def _checksum(payload):
    return hashlib.blake2b(payload, digest_size=8).hexdigest()


def save_weights(net, path):
    chunks = []
    table = []
    offset = 0
    for name, value in net.params.items():
        data = np.ascontiguousarray(value, dtype="<f4").tobytes()
        shape = "x".join(str(s) for s in value.shape)
        table.append(f"param {name} {shape} {offset} {value.size}")
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    lines = [f"{FORMAT_MAGIC} {FORMAT_VERSION}"]
    lines += [f"{k} {v}" for k, v in asdict(net.spec).items()]
    lines += [f"payload_bytes {len(payload)}", f"checksum {_checksum(payload)}",
              f"params {len(table)}", *table, "end"]
    header = ("\n".join(lines) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_weights(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    marker = b"\nend\n"
    cut = blob.find(marker)
    if not blob.startswith(FORMAT_MAGIC.encode()) or cut < 0:
        raise WeightsFormatError(
            f"{path}: not a weights file (expected {FORMAT_MAGIC} version {FORMAT_VERSION})")
    lines = blob[:cut].decode("ascii").split("\n")
    payload = blob[cut + len(marker):]
    magic, version = lines[0].split()
    if int(version) != FORMAT_VERSION:
        raise WeightsFormatError(
            f"{path}: format version {version}, this reader supports {FORMAT_VERSION}")
    fields = {}
    table = []
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key == "param":
            table.append(rest.split())
        else:
            fields[key] = rest
    try:
        spec = ArchitectureSpec(kind=fields["kind"], depth=int(fields["depth"]),
                                base_channels=int(fields["base_channels"]),
                                in_channels=int(fields["in_channels"]),
                                num_classes=int(fields["num_classes"]))
        declared = int(fields["payload_bytes"])
        checksum = fields["checksum"]
    except KeyError as exc:
        raise WeightsFormatError(
            f"{path}: header missing field {exc} (format version {FORMAT_VERSION})") from None
    if len(payload) != declared:
        raise WeightsFormatError(
            f"{path}: payload is {len(payload)} bytes, header declares {declared} "
            f"(truncated or corrupt; format version {FORMAT_VERSION})")
    if _checksum(payload) != checksum:
        raise WeightsFormatError(
            f"{path}: checksum mismatch (format version {FORMAT_VERSION})")

    expected = dict(parameter_shapes(spec))
    if len(table) != len(expected):
        raise WeightsFormatError(
            f"{path}: {len(table)} parameters in table, architecture has {len(expected)}")
    params = {}
    for (name, shape_s, offset_s, count_s), (exp_name, exp_shape) in zip(table, expected.items()):
        shape = tuple(int(s) for s in shape_s.split("x"))
        count = int(count_s)
        offset = int(offset_s)
        if name != exp_name:
            raise WeightsFormatError(f"{path}: parameter {name} found where {exp_name} expected")
        if shape != exp_shape or count != int(np.prod(shape)):
            raise WeightsFormatError(
                f"{path}: parameter {name} declares shape {shape} with {count} elements; "
                f"architecture needs {exp_shape}")
        if offset + 4 * count > len(payload):
            raise WeightsFormatError(f"{path}: parameter {name} runs past end of payload")
        params[name] = np.frombuffer(payload, dtype="<f4", count=count,
                                     offset=offset).reshape(shape).astype(np.float32)
    return Network(spec, params)
