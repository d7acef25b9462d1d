# ## Dense networks, reverse-mode gradients and Adam
#
# This is the numeric kernel the flow conditioners and the quantile networks
# are trained with. It deliberately supports exactly one kind of graph: a chain
# of affine layers, each optionally followed by a rectifier. Forward passes
# record a ``Trace`` of the activations, and ``net_backward`` walks that trace
# in reverse to produce exact gradients for every weight, every bias and the
# input.
#
# All arrays are float64. Inputs may be a single vector (``real[in]``) or a
# batch (``real[n, in]``); parameter gradients of a batch are summed over its
# rows.

import logging
import math
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

RELU = 'relu'
LINEAR = 'linear'
ACTIVATIONS = (RELU, LINEAR)

# Raised when array shapes do not line up with a network or optimizer.
class ShapeError(Exception):
    pass

# Raised when an update would introduce a non-finite value. The update is
# rejected and the parameters are left untouched.
class NumericError(Exception):
    pass

# Raised when training produces a non-finite loss. ``checkpoint`` holds
# whatever the caller's checkpoint function returned after the last epoch that
# finished with a finite loss (``None`` if no epoch finished).
class DivergenceError(NumericError):
    def __init__(self, message, epoch, losses, checkpoint=None):
        super().__init__(message)
        self.epoch = epoch
        self.losses = losses
        self.checkpoint = checkpoint

# ### Networks

@dataclass
class DenseNet:
    weights: list
    biases: list
    activations: tuple

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        self.activations = tuple(self.activations)
        if not self.weights:
            raise ShapeError('A network needs at least one layer')
        if not len(self.weights) == len(self.biases) == len(self.activations):
            raise ShapeError('Weights, biases and activations differ in length')
        for index, (w, b, activation) in enumerate(self.layers()):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f'Layer {index} has weight {w.shape} and bias {b.shape}')
            if index > 0 and w.shape[1] != self.weights[index - 1].shape[0]:
                raise ShapeError(
                    f'Layer {index} expects width {w.shape[1]}, '
                    f'previous layer produces {self.weights[index - 1].shape[0]}'
                )
            if activation not in ACTIVATIONS:
                raise ShapeError(f'Unknown activation {activation!r}')
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError(f'Layer {index} has non-finite parameters')

    def layers(self):
        return zip(self.weights, self.biases, self.activations)

    @property
    def in_width(self):
        return self.weights[0].shape[1]

    @property
    def out_width(self):
        return self.weights[-1].shape[0]

    @property
    def widths(self):
        return (self.in_width, *(w.shape[0] for w in self.weights))

    # The parameter arrays in a fixed order: W0, b0, W1, b1, ... The arrays are
    # the network's own, so in-place updates change the network.
    def parameters(self):
        return [p for w, b in zip(self.weights, self.biases) for p in (w, b)]

    def copy(self):
        return DenseNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activations,
        )

# Builds a network with the given layer widths, rectifiers after every hidden
# layer and a linear output. Weights are uniform on ±1/sqrt(fan-in), biases are
# zero. With ``zero_output`` the last layer starts at exactly zero, so the
# network computes the constant 0 until it is trained.
def init_net(widths, rng, zero_output=False):
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ShapeError(f'Need input and output widths, got {widths}')
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    if zero_output:
        weights[-1][...] = 0.0
    activations = (RELU,) * (len(weights) - 1) + (LINEAR,)
    return DenseNet(weights, biases, activations)

# ### Forward and backward passes

# Inputs to each layer (``inputs[0]`` is the network input) and the
# pre-activation of each layer.
Trace = namedtuple('Trace', 'inputs preactivations output')

def as_batch(values, width, what='input'):
    values = np.asarray(values, dtype=np.float64)
    single = values.ndim == 1
    batch = values.reshape(1, -1) if single else values
    if batch.ndim != 2 or batch.shape[1] != width:
        raise ShapeError(f'{what} has shape {values.shape}, expected width {width}')
    return batch, single

def net_forward(net, inputs):
    batch, _ = as_batch(inputs, net.in_width)
    layer_inputs, preactivations = [], []
    h = batch
    for w, b, activation in net.layers():
        layer_inputs.append(h)
        a = h @ w.T + b
        preactivations.append(a)
        h = np.maximum(a, 0.0) if activation == RELU else a
    return Trace(layer_inputs, preactivations, h)

def net_apply(net, inputs):
    _, single = as_batch(inputs, net.in_width)
    output = net_forward(net, inputs).output
    return output[0] if single else output

# Gradients of ``sum(upstream * net(inputs))``. Returns one ``(dW, db)`` pair per
# layer and the gradient with respect to the input. The rectifier's gradient at
# a pre-activation of exactly zero is zero.
def net_backward(net, inputs, upstream, trace=None):
    batch, single = as_batch(inputs, net.in_width)
    if trace is None:
        trace = net_forward(net, batch)
    g, _ = as_batch(upstream, net.out_width, 'upstream gradient')
    if g.shape[0] != batch.shape[0]:
        raise ShapeError(f'Upstream has {g.shape[0]} rows, input has {batch.shape[0]}')

    grads = [None] * len(net.weights)
    for index in reversed(range(len(net.weights))):
        w = net.weights[index]
        if net.activations[index] == RELU:
            g = g * (trace.preactivations[index] > 0.0)
        grads[index] = (g.T @ trace.inputs[index], g.sum(axis=0))
        g = g @ w
    return grads, (g[0] if single else g)

def flatten_grads(grads):
    return [p for pair in grads for p in pair]

# ### Adam

@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first: list = field(default_factory=list)
    second: list = field(default_factory=list)

def adam_init(params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
    if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
        raise ValueError(f'Moment decay rates must lie in (0, 1), got {beta1}, {beta2}')
    return OptimizerState(
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        first=[np.zeros_like(p) for p in params],
        second=[np.zeros_like(p) for p in params],
    )

# One bias-corrected Adam update, applied to ``params`` in place. A non-finite
# gradient rejects the whole update: neither the parameters nor the state
# change.
def adam_step(state, params, grads):
    if not len(params) == len(grads) == len(state.first) == len(state.second):
        raise ShapeError(
            f'{len(params)} parameters, {len(grads)} gradients, '
            f'{len(state.first)} moment accumulators'
        )
    for index, (p, g, m) in enumerate(zip(params, grads, state.first)):
        if not p.shape == np.shape(g) == m.shape:
            raise ShapeError(f'Parameter {index} has shape {p.shape}, gradient {np.shape(g)}')
        if not np.all(np.isfinite(g)):
            raise NumericError(f'Gradient for parameter {index} is not finite')

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    step_size = state.learning_rate / bc1
    for p, g, m, v in zip(params, grads, state.first, state.second):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= step_size * m / (np.sqrt(v / bc2) + state.epsilon)
    return params, state

# ### Training loop

@dataclass(frozen=True)
class Schedule:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-3

# Minimises ``objective`` by mini-batch Adam. ``objective(rows)`` receives an
# index array and returns ``(loss, grads)`` with grads aligned to ``params``.
# Rows are fully reshuffled every epoch with ``rng``. Returns the per-epoch
# mean loss trace.
#
# ``checkpoint``, if given, is called after every epoch that ends with a finite
# loss; its latest result travels on the ``DivergenceError`` if training later
# diverges.
def minimize(objective, params, n, schedule, rng, checkpoint=None, name='model'):
    if n < 1:
        raise ShapeError(f'Cannot train {name} on an empty set')
    state = adam_init(params, schedule.learning_rate)
    losses = []
    saved = None
    for epoch in range(schedule.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, schedule.batch_size):
            rows = order[start:start + schedule.batch_size]
            loss, grads = objective(rows)
            if not math.isfinite(loss):
                raise DivergenceError(
                    f'{name} diverged in epoch {epoch}', epoch, losses, saved)
            try:
                adam_step(state, params, grads)
            except NumericError as e:
                raise DivergenceError(
                    f'{name} diverged in epoch {epoch}: {e}', epoch, losses, saved) from e
            total += loss * len(rows)
        losses.append(total / n)
        if checkpoint is not None:
            saved = checkpoint()
        log.debug('%s epoch %d loss %.6f', name, epoch, losses[-1])
    if losses:
        log.info('%s trained for %d epochs, final loss %.6f', name, len(losses), losses[-1])
    return losses

# ### Documents

def net_to_document(net):
    return {
        'weights': [w.tolist() for w in net.weights],
        'biases': [b.tolist() for b in net.biases],
        'activations': list(net.activations),
    }

def net_from_document(document):
    weights = []
    for w, b in zip(document['weights'], document['biases']):
        w = np.asarray(w, dtype=np.float64)
        weights.append(w if w.ndim == 2 else w.reshape(len(b), 0))
    return DenseNet(weights, document['biases'], document['activations'])
