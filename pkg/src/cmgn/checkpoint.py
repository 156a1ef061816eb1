"""Binary checkpoint format.

Layout, all little-endian::

    magic        4 bytes   b"CMGN"
    version      u32       1
    n_layers     u32
    per layer    u32 out, u32 in, u32 activation (0 relu, 1 identity)
    classifier   u32 d, u32 n
    has_velocity u32       0 or 1
    params       f64[]     per layer weights (row-major) then biases, then classifier (row-major)
    velocity     f64[]     same shapes and order, only if has_velocity
    curriculum   f64 t, f64 momentum, u64 iteration_k, u32 statistic, u32 weight_on_history
"""

import struct

import numpy as np

from cmgn.curriculum import CurriculumState, StatisticKind
from cmgn.errors import CheckpointFormatError
from cmgn.trainer import Activation, Layer, ModelParams

MAGIC = b"CMGN"
VERSION = 1
_ACTIVATIONS = [Activation.RELU, Activation.IDENTITY]
_STATISTICS = [
    StatisticKind.MEAN_POSITIVE_COSINE,
    StatisticKind.MODE_POSITIVE_COSINE,
    StatisticKind.MEAN_GT_PROBABILITY,
]


def _shapes(params):
    shapes = []
    for layer in params.layers:
        shapes += [layer.weights.shape, layer.biases.shape]
    shapes.append(params.classifier.shape)
    return shapes


def save_checkpoint(params, state, path, velocity=None):
    out = [MAGIC, struct.pack("<II", VERSION, len(params.layers))]
    for layer in params.layers:
        o, i = layer.weights.shape
        out.append(struct.pack("<III", o, i, _ACTIVATIONS.index(layer.activation)))
    d, n = params.classifier.shape
    out.append(struct.pack("<III", d, n, 0 if velocity is None else 1))
    blocks = params.arrays() + ([] if velocity is None else list(velocity))
    for arr, shape in zip(blocks, _shapes(params) * 2):
        arr = np.asarray(arr, dtype="<f8")
        if arr.shape != shape:
            raise ValueError(f"array of shape {arr.shape} where {shape} was expected")
        out.append(np.ascontiguousarray(arr).tobytes())
    out.append(
        struct.pack(
            "<ddQII",
            state.t,
            state.momentum,
            state.iteration_k,
            _STATISTICS.index(state.statistic_kind),
            int(state.weight_on_history),
        )
    )
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"truncated while reading {what}", self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, shape, what):
        count = int(np.prod(shape))
        return np.frombuffer(self.take(8 * count, what), dtype="<f8").astype(np.float64).reshape(shape)


def load_checkpoint(path):
    """Read a checkpoint. Returns ``(params, curriculum_state, velocity)``;
    ``velocity`` is None when the file carries no momentum buffers."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4, "magic") != MAGIC:
        raise CheckpointFormatError("bad magic", 0)
    version, n_layers = r.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}", 4)
    specs = []
    for i in range(n_layers):
        at = r.pos
        o, k, act = r.unpack("<III", f"layer {i} header")
        if act >= len(_ACTIVATIONS):
            raise CheckpointFormatError(f"unknown activation code {act}", at)
        specs.append((o, k, _ACTIVATIONS[act]))
    at = r.pos
    d, n, has_vel = r.unpack("<III", "classifier header")
    if has_vel not in (0, 1):
        raise CheckpointFormatError("bad velocity flag", at + 8)

    def read_blocks(tag):
        blocks = []
        for i, (o, k, _) in enumerate(specs):
            blocks.append(r.array((o, k), f"{tag} layer {i} weights"))
            blocks.append(r.array((o,), f"{tag} layer {i} biases"))
        blocks.append(r.array((d, n), f"{tag} classifier"))
        return blocks

    blocks = read_blocks("params")
    velocity = read_blocks("velocity") if has_vel else None
    at = r.pos
    t, momentum, k, stat, on_history = r.unpack("<ddQII", "curriculum state")
    if stat >= len(_STATISTICS):
        raise CheckpointFormatError(f"unknown statistic code {stat}", at + 24)
    if r.pos != len(r.data):
        raise CheckpointFormatError("trailing bytes", r.pos)

    layers = [Layer(blocks[2 * i], blocks[2 * i + 1], act) for i, (_, _, act) in enumerate(specs)]
    try:
        params = ModelParams(layers, blocks[-1])
        state = CurriculumState(t, momentum, k, _STATISTICS[stat], bool(on_history))
    except ValueError as exc:
        raise CheckpointFormatError(str(exc), at) from None
    return params, state, velocity
