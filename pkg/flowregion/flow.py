# ## Conditional affine coupling flows
#
# A FlowModel is a bijection ``t(., x)`` from a standard Gaussian latent space
# to the output space, conditioned on ``x``. It is a stack of coupling layers.
# Each layer passes one block of coordinates (I1) through unchanged and maps the
# other block (I2) affinely:
#
#     out[I2] = in[I2] * exp(s) + t,    s = c * tanh(u(in[I1], x) / c),
#                                       t = v(in[I1], x)
#
# where u and v are dense conditioner networks and c is the scale clamp. The
# clamp keeps every per-layer log-determinant inside [-c|I2|, c|I2|]. Adjacent
# layers swap the roles of the two blocks. When q = 1 there is no second
# block, and each layer is the conditional affine map y * exp(u(x)) + v(x).
#
# The model also owns the standardization of x and y fitted on its training
# set. ``flow_forward`` and ``flow_inverse`` work in original units: the y
# scaling is part of the bijection and contributes its constant log-determinant,
# so densities and volumes computed from the model are in original units too.

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as rngs
from .autodiff import (
    DivergenceError, Schedule, ShapeError, as_batch, flatten_grads, init_net,
    minimize, net_backward, net_forward, net_from_document, net_to_document,
)
from .data import Scaler

log = logging.getLogger(__name__)

DEFAULT_CLAMP = 5.0
LOG_2PI = math.log(2.0 * math.pi)

# Raised for non-finite inputs or intermediates, and for empty batches.
class FlowError(Exception):
    pass

@dataclass
class CouplingLayer:
    # True marks pass-through (I1) coordinates.
    mask: np.ndarray
    scale_net: object
    shift_net: object
    clamp: float = DEFAULT_CLAMP

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not (~self.mask).any():
            raise ShapeError('A coupling layer must transform at least one coordinate')
        if self.mask.shape[0] > 1 and not self.mask.any():
            raise ShapeError('A coupling layer over q >= 2 needs a pass-through coordinate')
        for net in (self.scale_net, self.shift_net):
            if net.out_width != len(self.active):
                raise ShapeError(
                    f'Conditioner produces {net.out_width} values for {len(self.active)} coordinates')
        if self.scale_net.in_width != self.shift_net.in_width:
            raise ShapeError('Scale and shift conditioners take different inputs')

    @property
    def passive(self):
        return np.flatnonzero(self.mask)

    @property
    def active(self):
        return np.flatnonzero(~self.mask)

    @property
    def p(self):
        return self.scale_net.in_width - len(self.passive)

    def parameters(self):
        return self.scale_net.parameters() + self.shift_net.parameters()

    def copy(self):
        return CouplingLayer(self.mask.copy(), self.scale_net.copy(), self.shift_net.copy(), self.clamp)

@dataclass(frozen=True)
class FlowConfig:
    layers: int = 6
    hidden: tuple = (128, 128)
    epochs: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 256
    clamp: float = DEFAULT_CLAMP

    @property
    def schedule(self):
        return Schedule(self.epochs, self.batch_size, self.learning_rate)

    def to_document(self):
        document = asdict(self)
        document['hidden'] = list(self.hidden)
        return document

    # Also accepts partial option mappings from configuration documents; absent
    # keys keep their defaults.
    @classmethod
    def from_document(cls, document):
        document = dict(document)
        if 'hidden' in document:
            document['hidden'] = tuple(int(width) for width in document['hidden'])
        return cls(**document)

@dataclass
class FlowModel:
    layers: list
    p: int
    q: int
    x_scaler: Scaler = None
    y_scaler: Scaler = None
    seed: int = None
    config: FlowConfig = None
    losses: list = field(default_factory=list)

    def __post_init__(self):
        if self.x_scaler is None:
            self.x_scaler = Scaler.identity(self.p)
        if self.y_scaler is None:
            self.y_scaler = Scaler.identity(self.q)
        for index, layer in enumerate(self.layers):
            if layer.mask.shape[0] != self.q or layer.p != self.p:
                raise ShapeError(f'Layer {index} does not match p={self.p}, q={self.q}')

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def copy(self):
        return FlowModel(
            [layer.copy() for layer in self.layers], self.p, self.q,
            self.x_scaler, self.y_scaler, self.seed, self.config, list(self.losses),
        )

# Pass-through masks for ``count`` layers over q coordinates: even/odd index
# blocks, swapped on every other layer. For q = 1 every layer transforms the
# single coordinate.
def partition_masks(q, count):
    if q == 1:
        return [np.array([False]) for _ in range(count)]
    even = np.arange(q) % 2 == 0
    return [even if k % 2 == 0 else ~even for k in range(count)]

# A model whose conditioners all start at exactly zero, so it is the identity
# map (up to the scalers) until trained.
def init_flow(p, q, config=FlowConfig(), seed=0, x_scaler=None, y_scaler=None, rng=None):
    if rng is None:
        rng = rngs.generator(seed, 'flow')
    layers = []
    for mask in partition_masks(q, config.layers):
        widths = [int(mask.sum()) + p, *config.hidden, int((~mask).sum())]
        layers.append(CouplingLayer(
            mask,
            init_net(widths, rng, zero_output=True),
            init_net(widths, rng, zero_output=True),
            config.clamp,
        ))
    return FlowModel(layers, p, q, x_scaler, y_scaler, seed, config)

# ### Layer maps

def _conditioner(layer, values, x):
    return np.concatenate([values[:, layer.passive], x], axis=1)

def _scale(layer, raw):
    if not layer.clamp:
        return raw
    return layer.clamp * np.tanh(raw / layer.clamp)

def _scale_derivative(layer, raw):
    if not layer.clamp:
        return np.ones_like(raw)
    return 1.0 - np.tanh(raw / layer.clamp) ** 2

def _layer_forward(layer, z, x):
    h = _conditioner(layer, z, x)
    s = _scale(layer, net_forward(layer.scale_net, h).output)
    t = net_forward(layer.shift_net, h).output
    out = z.copy()
    out[:, layer.active] = z[:, layer.active] * np.exp(s) + t
    return out, s.sum(axis=1)

def _layer_inverse(layer, y, x):
    h = _conditioner(layer, y, x)
    s = _scale(layer, net_forward(layer.scale_net, h).output)
    t = net_forward(layer.shift_net, h).output
    out = y.copy()
    out[:, layer.active] = (y[:, layer.active] - t) * np.exp(-s)
    return out, -s.sum(axis=1)

# Brings (values, x) to matching batches. A single x is shared by every row.
def _pair(values, x, q, p, what='latent'):
    values, single = as_batch(values, q, what)
    xs, x_single = as_batch(x, p, 'condition')
    if xs.shape[0] == 1 and values.shape[0] != 1:
        xs = np.repeat(xs, values.shape[0], axis=0)
    if xs.shape[0] != values.shape[0]:
        raise ShapeError(f'{values.shape[0]} rows of {what} but {xs.shape[0]} conditions')
    for name, array in ((what, values), ('condition', xs)):
        if not np.all(np.isfinite(array)):
            raise FlowError(f'Non-finite {name} input')
    return values, xs, single and x_single

def _unbatch(single, *arrays):
    if single:
        return tuple(a[0] for a in arrays)
    return arrays

def coupling_forward(z, x, layer):
    z, x, single = _pair(z, x, len(layer.mask), layer.p)
    return _unbatch(single, *_layer_forward(layer, z, x))

def coupling_inverse(y, x, layer):
    y, x, single = _pair(y, x, len(layer.mask), layer.p, 'output')
    return _unbatch(single, *_layer_inverse(layer, y, x))

# ### Whole-model maps

# ``t(z, x)`` together with log |det dt/dz|.
def forward_with_logdet(z, x, model):
    z, x, single = _pair(z, x, model.q, model.p)
    xs = model.x_scaler.transform(x)
    values = z
    logdet = np.zeros(z.shape[0])
    for index, layer in enumerate(model.layers):
        values, layer_logdet = _layer_forward(layer, values, xs)
        if not np.all(np.isfinite(values)):
            raise FlowError(f'Non-finite value after layer {index} of the forward map')
        logdet += layer_logdet
    y = model.y_scaler.inverse(values)
    logdet += model.y_scaler.log_scale
    return _unbatch(single, y, logdet)

def flow_forward(z, x, model):
    y, _ = forward_with_logdet(z, x, model)
    return y

# ``t^-1(y, x)`` together with log |det dt^-1/dy|.
def flow_inverse(y, x, model):
    y, x, single = _pair(y, x, model.q, model.p, 'output')
    xs = model.x_scaler.transform(x)
    values = model.y_scaler.transform(y)
    logdet = np.full(y.shape[0], -model.y_scaler.log_scale)
    for index in reversed(range(len(model.layers))):
        values, layer_logdet = _layer_inverse(model.layers[index], values, xs)
        if not np.all(np.isfinite(values)):
            raise FlowError(f'Non-finite value after layer {index} of the inverse map')
        logdet += layer_logdet
    return _unbatch(single, values, logdet)

# Conditional log-density of y given x under the model.
def log_density(y, x, model):
    z, logdet = flow_inverse(y, x, model)
    z = np.atleast_2d(z)
    density = -0.5 * np.sum(z * z, axis=1) - 0.5 * model.q * LOG_2PI + np.atleast_1d(logdet)
    return density[0] if np.ndim(y) == 1 else density

def negative_log_likelihood(x, y, model):
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] == 0:
        raise FlowError('Cannot evaluate the likelihood of an empty batch')
    return float(-np.mean(np.atleast_1d(log_density(y, x, model))))

# The mean negative log-likelihood of a batch and its gradient with respect to
# every parameter, in ``model.parameters()`` order.
def nll_gradient(x, y, model):
    y, x, _ = _pair(y, x, model.q, model.p, 'output')
    n = y.shape[0]
    if n == 0:
        raise FlowError('Cannot evaluate the likelihood of an empty batch')
    xs = model.x_scaler.transform(x)
    values = model.y_scaler.transform(y)
    logdet = np.full(n, -model.y_scaler.log_scale)
    records = []
    for index in reversed(range(len(model.layers))):
        layer = model.layers[index]
        h = _conditioner(layer, values, xs)
        u_trace = net_forward(layer.scale_net, h)
        v_trace = net_forward(layer.shift_net, h)
        s = _scale(layer, u_trace.output)
        out = values.copy()
        out[:, layer.active] = (values[:, layer.active] - v_trace.output) * np.exp(-s)
        logdet -= s.sum(axis=1)
        records.append((index, h, u_trace, v_trace, s, out))
        values = out
    z = values
    loss = float(np.mean(0.5 * np.sum(z * z, axis=1) + 0.5 * model.q * LOG_2PI - logdet))

    # Walk the inverse map backwards, from z towards y.
    g = z / n
    grads = [None] * len(model.layers)
    for index, h, u_trace, v_trace, s, out in reversed(records):
        layer = model.layers[index]
        active, passive = layer.active, layer.passive
        g_active = g[:, active]
        e = np.exp(-s)
        g_shift = -g_active * e
        g_scale = (1.0 / n - g_active * out[:, active]) * _scale_derivative(layer, u_trace.output)
        u_grads, g_hu = net_backward(layer.scale_net, h, g_scale, u_trace)
        v_grads, g_hv = net_backward(layer.shift_net, h, g_shift, v_trace)
        g_in = g.copy()
        g_in[:, active] = g_active * e
        g_in[:, passive] += (g_hu + g_hv)[:, :len(passive)]
        g = g_in
        grads[index] = flatten_grads(u_grads) + flatten_grads(v_grads)
    return loss, [p for layer_grads in grads for p in layer_grads]

# ### Training and sampling

def train_flow(x, y, config=FlowConfig(), seed=0):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y.reshape(-1, 1)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if y.shape[0] == 0:
        raise FlowError('Cannot train a flow on an empty set')
    rng = rngs.generator(seed, 'flow')
    model = init_flow(
        x.shape[1], y.shape[1], config, seed,
        x_scaler=Scaler.fit(x), y_scaler=Scaler.fit(y), rng=rng,
    )

    def objective(rows):
        return nll_gradient(x[rows], y[rows], model)

    try:
        model.losses = minimize(
            objective, model.parameters(), y.shape[0], config.schedule, rng,
            checkpoint=model.copy, name='flow',
        )
    except DivergenceError as e:
        if e.checkpoint is not None:
            e.checkpoint.losses = list(e.losses)
        log.warning('Flow training diverged in epoch %d', e.epoch)
        raise
    return model

def latent_draws(q, n, seed):
    return rngs.generator(seed, 'latent').standard_normal((n, q))

# ``n`` draws of y given one x: standard Gaussian latents pushed forward.
def sample(model, x, n, seed):
    return flow_forward(latent_draws(model.q, n, seed), x, model)

# ### Documents

def flow_to_document(model):
    return {
        'kind': 'flow',
        'version': 1,
        'p': model.p,
        'q': model.q,
        'seed': model.seed,
        'config': model.config.to_document() if model.config else None,
        'losses': list(model.losses),
        'x_scaler': model.x_scaler.to_document(),
        'y_scaler': model.y_scaler.to_document(),
        'layers': [
            {
                'mask': layer.mask.tolist(),
                'clamp': layer.clamp,
                'scale': net_to_document(layer.scale_net),
                'shift': net_to_document(layer.shift_net),
            }
            for layer in model.layers
        ],
    }

def flow_from_document(document):
    layers = [
        CouplingLayer(
            entry['mask'],
            net_from_document(entry['scale']),
            net_from_document(entry['shift']),
            entry['clamp'],
        )
        for entry in document['layers']
    ]
    config = document.get('config')
    return FlowModel(
        layers, document['p'], document['q'],
        Scaler.from_document(document['x_scaler']),
        Scaler.from_document(document['y_scaler']),
        document.get('seed'),
        FlowConfig.from_document(config) if config else None,
        list(document.get('losses', [])),
    )
