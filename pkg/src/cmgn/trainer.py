"""Deterministic SGD training of a small MLP embedding with a unit-column
classifier head.

Each iteration: embed and normalize the batch, take cosines against the
classifier, run the loss forward/backward, backpropagate through the
normalization and the MLP, take a momentum SGD step (then renormalize the
classifier columns), and finally update the curriculum parameter ``t``
from the same batch.
"""

import csv
import enum
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from cmgn.curriculum import CurriculumState, StatisticKind, batch_statistic, update_t
from cmgn.errors import DegenerateInputError, NumericalFailure, ShapeError
from cmgn.losses import CosineBatch, LossVariant, backward, forward, hard_gradient_range
from cmgn.numerics import cosine_batch, l2_normalize_rows, normalize_columns

log = logging.getLogger(__name__)


class Activation(str, enum.Enum):
    RELU = "relu"
    IDENTITY = "identity"


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: Activation = Activation.RELU


@dataclass
class ModelParams:
    layers: list
    classifier: np.ndarray  # (d, n), unit columns

    def __post_init__(self):
        if self.layers and self.layers[-1].weights.shape[0] != self.classifier.shape[0]:
            raise ShapeError("last layer width must equal the classifier's row count")

    @property
    def embedding_dim(self):
        return self.classifier.shape[0]

    @property
    def num_classes(self):
        return self.classifier.shape[1]

    def arrays(self):
        """Every parameter array in a fixed order (weights, biases, ..., classifier)."""
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.biases]
        out.append(self.classifier)
        return out

    def copy(self):
        return ModelParams(
            [Layer(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers],
            self.classifier.copy(),
        )


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_epochs: tuple = (17, 23, 28)
    lr_decay_factor: float = 0.1
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    variant: LossVariant = field(default_factory=LossVariant)
    statistic_kind: StatisticKind = StatisticKind.MEAN_POSITIVE_COSINE
    ema_momentum: float = 0.99
    ema_weight_on_history: bool = True
    hidden_dims: tuple = (64,)
    embedding_dim: int = 16

    def __post_init__(self):
        if isinstance(self.variant, dict):
            self.variant = LossVariant(**self.variant)
        self.statistic_kind = StatisticKind.parse(self.statistic_kind)
        self.lr_decay_epochs = tuple(int(e) for e in self.lr_decay_epochs)
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if any(b <= a for a, b in zip(self.lr_decay_epochs, self.lr_decay_epochs[1:])):
            raise ValueError("lr_decay_epochs must be strictly increasing")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.embedding_dim < 2 or any(h < 1 for h in self.hidden_dims):
            raise ValueError("layer widths must be positive (embedding_dim >= 2)")

    def lr_at(self, epoch):
        """Step-decayed learning rate for a 0-based epoch index."""
        drops = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.learning_rate * self.lr_decay_factor**drops

    def to_dict(self):
        d = asdict(self)
        d["variant"] = self.variant.to_dict()
        d["statistic_kind"] = self.statistic_kind.value
        d["lr_decay_epochs"] = list(self.lr_decay_epochs)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


TRACE_HEADER = ["k", "loss", "t", "r", "hard_fraction", "M_min", "M_max", "lr"]


@dataclass
class TraceRecord:
    k: int
    loss: float
    t: float
    r: float
    hard_fraction: float
    M_min: float
    M_max: float
    lr: float


@dataclass
class TrainTrace:
    """One record per optimizer step.

    ``t`` is the curriculum value after the step's update (the fixed value
    for fixed-t variants); ``M_min``/``M_max`` bound the hard-pair gradient
    multiplier for the step and are NaN when the batch had no hard pairs.
    """

    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for r in self.records:
                w.writerow([r.k] + [repr(float(getattr(r, h))) for h in TRACE_HEADER[1:]])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != TRACE_HEADER:
                raise ValueError(f"{path}: unexpected trace header {header}")
            recs = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(TRACE_HEADER):
                    raise ValueError(f"{path}: line {lineno}: wrong field count")
                recs.append(TraceRecord(int(row[0]), *(float(v) for v in row[1:])))
        return cls(recs)


def init_params(config, input_dim, num_classes, seed=None):
    """He-initialized ReLU MLP, identity output layer, random unit classifier."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    dims = [input_dim, *config.hidden_dims, config.embedding_dim]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        w = rng.standard_normal((fan_out, fan_in)) * math.sqrt(2.0 / fan_in)
        layers.append(Layer(w, np.zeros(fan_out), Activation.IDENTITY if last else Activation.RELU))
    classifier = normalize_columns(rng.standard_normal((config.embedding_dim, num_classes)))
    return ModelParams(layers, classifier)


def _mlp(params, inputs):
    """Raw MLP output plus the per-layer (input, pre-activation) cache."""
    h = np.asarray(inputs, dtype=np.float64)
    if h.ndim != 2:
        raise ShapeError("inputs must be (B, in)")
    cache = []
    for layer in params.layers:
        if h.shape[1] != layer.weights.shape[1]:
            raise ShapeError(f"layer expects {layer.weights.shape[1]} inputs, got {h.shape[1]}")
        z = h @ layer.weights.T + layer.biases
        cache.append((h, z))
        h = np.maximum(z, 0.0) if layer.activation is Activation.RELU else z
    return h, cache


def forward_embed(params, inputs):
    """MLP forward followed by row-wise l2 normalization."""
    raw, _ = _mlp(params, inputs)
    try:
        x, _ = l2_normalize_rows(raw)
    except DegenerateInputError as exc:
        raise DegenerateInputError(f"zero-norm embedding: {exc}") from None
    return x


def _embed_backward(params, cache, raw, x, norms, grad_x):
    """Gradients of the layers given dL/dx for ``x = raw / ||raw||``."""
    proj = np.einsum("ij,ij->i", grad_x, x)
    grad = (grad_x - x * proj[:, None]) / norms[:, None]
    grads = []
    for layer, (h_in, z) in zip(reversed(params.layers), reversed(cache)):
        if layer.activation is Activation.RELU:
            grad = grad * (z > 0)
        grads.append((grad.T @ h_in, grad.sum(axis=0)))
        grad = grad @ layer.weights
    return grads[::-1]


def sgd_step(params, grads, velocity, config, epoch):
    """Classical momentum SGD followed by classifier column renormalization.

    ``grads`` and ``velocity`` follow :meth:`ModelParams.arrays` order. Weight
    decay applies to layer weights and the classifier, never to biases.
    Returns new ``(params, velocity)``; the inputs are left untouched.
    """
    arrays = params.arrays()
    if len(grads) != len(arrays) or len(velocity) != len(arrays):
        raise ShapeError("gradient/velocity lists do not match the parameters")
    lr = config.lr_at(epoch)
    new_arrays, new_vel = [], []
    for i, (p, g, v) in enumerate(zip(arrays, grads, velocity)):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeError(f"shape mismatch for parameter {i}")
        is_bias = i < len(arrays) - 1 and i % 2 == 1
        step = g if is_bias or config.weight_decay == 0 else g + config.weight_decay * p
        v = config.momentum * v + step
        new_vel.append(v)
        new_arrays.append(p - lr * v)
    new_arrays[-1] = normalize_columns(new_arrays[-1])
    layers = [
        Layer(new_arrays[2 * i], new_arrays[2 * i + 1], l.activation)
        for i, l in enumerate(params.layers)
    ]
    return ModelParams(layers, new_arrays[-1]), new_vel


def zero_velocity(params):
    return [np.zeros_like(a) for a in params.arrays()]


@dataclass
class TrainState:
    """Everything needed to continue a run: parameters, momentum buffers, curriculum."""

    params: ModelParams
    velocity: list
    curriculum: CurriculumState


def initial_state(config, dataset):
    params = init_params(config, dataset.input_dim, dataset.num_classes)
    curriculum = CurriculumState(
        t=0.0,
        momentum=config.ema_momentum,
        statistic_kind=config.statistic_kind,
        weight_on_history=config.ema_weight_on_history,
    )
    return TrainState(params, zero_velocity(params), curriculum)


def epoch_order(config, n_rows, epoch):
    """Shuffled row order for one epoch, a pure function of (seed, epoch)."""
    return np.random.default_rng((config.seed, 1, epoch)).permutation(n_rows)


def iterations_per_epoch(config, n_rows):
    return -(-n_rows // config.batch_size)


def train_step(state, config, inputs, labels, epoch):
    """One iteration. Returns ``(new_state, record)``."""
    params, variant = state.params, config.variant
    k = state.curriculum.iteration_k + 1
    t_used = variant.resolve_t(state.curriculum.t)

    raw, cache = _mlp(params, inputs)
    try:
        x, norms = l2_normalize_rows(raw)
    except DegenerateInputError as exc:
        raise DegenerateInputError(f"iteration {k}: zero-norm embedding: {exc}") from None
    batch = CosineBatch(cosine_batch(x, params.classifier), labels)
    try:
        out = forward(batch, variant, t_used)
    except NumericalFailure as exc:
        raise NumericalFailure(f"iteration {k}: {exc}", exc.sample_index, k) from None
    grad_x, grad_w = backward(batch, variant, t_used, x, params.classifier, output=out)
    layer_grads = _embed_backward(params, cache, raw, x, norms, grad_x)
    grads = [g for pair in layer_grads for g in pair] + [grad_w]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericalFailure(f"iteration {k}: non-finite gradient", iteration=k)

    new_params, new_velocity = sgd_step(params, grads, state.velocity, config, epoch)
    r = batch_statistic(batch, out.prob_gt, state.curriculum.statistic_kind)
    curriculum = update_t(state.curriculum, r)
    m_lo, m_hi = hard_gradient_range(batch, out, variant)
    record = TraceRecord(
        k=k,
        loss=out.loss,
        t=variant.resolve_t(curriculum.t),
        r=r,
        hard_fraction=out.hard_sample_fraction,
        M_min=m_lo,
        M_max=m_hi,
        lr=config.lr_at(epoch),
    )
    return TrainState(new_params, new_velocity, curriculum), record


def train(config, dataset, state=None, stop_after=None):
    """Run the training loop over the train split.

    ``state`` resumes from an earlier run (its ``iteration_k`` fixes the
    position in the epoch schedule); ``stop_after`` ends the run after that
    many total iterations. Returns ``(final_state, trace)`` where the trace
    only covers the iterations run by this call.
    """
    inputs, labels = dataset.train()
    if len(labels) == 0:
        raise ValueError("dataset has no training rows")
    if state is None:
        state = initial_state(config, dataset)
    if dataset.input_dim != state.params.layers[0].weights.shape[1]:
        raise ShapeError("dataset input_dim does not match the model")
    if dataset.num_classes != state.params.num_classes:
        raise ShapeError("dataset class count does not match the classifier")

    per_epoch = iterations_per_epoch(config, len(labels))
    total = config.epochs * per_epoch
    if stop_after is not None:
        total = min(total, stop_after)
    trace = TrainTrace()
    k = state.curriculum.iteration_k
    while k < total:
        epoch, pos = divmod(k, per_epoch)
        order = epoch_order(config, len(labels), epoch)
        idx = order[pos * config.batch_size : (pos + 1) * config.batch_size]
        state, record = train_step(state, config, inputs[idx], labels[idx], epoch)
        trace.records.append(record)
        k = state.curriculum.iteration_k
        if pos == per_epoch - 1:
            log.debug("epoch %d done: loss=%.4f t=%.4f", epoch + 1, record.loss, record.t)
    return state, trace


def train_accuracy(params, dataset):
    """Fraction of train rows whose highest-cosine class is their label."""
    inputs, labels = dataset.train()
    x = forward_embed(params, inputs)
    return float(np.mean(np.argmax(x @ params.classifier, axis=1) == labels))
