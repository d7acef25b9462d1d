# ## Multi-target conformalized quantile regression
#
# Each output coordinate j gets a lower and an upper quantile network, trained
# with the pinball loss at levels alpha/2 and 1 - alpha/2. With a weight
# vector w (a q x 2 array: column 0 weighs the lower side, column 1 the upper
# side) the score of a pair is
#
#     s = max_j max(w[j, 0] (lo_j(x) - y_j), w[j, 1] (y_j - up_j(x)))
#
# which is negative inside the unexpanded box. Calibrating s gives the box
#
#     lo_j(x) - s / w[j, 0] <= y_j <= up_j(x) + s / w[j, 1]
#
# whose volume is the product of its side lengths. Scaling w by a positive
# constant scales scores and threshold together, so the box does not change.

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as rngs
from .autodiff import (
    DivergenceError, Schedule, flatten_grads, init_net, minimize, net_backward,
    net_forward, net_from_document, net_to_document,
)
from .conformal import UNBOUNDED, bounded, check_alpha, conformal_quantile
from .data import Scaler, subdivide
from .montecarlo import VolumeEstimate
from .registry import region_method

log = logging.getLogger(__name__)

WEIGHT_STEPS = (2.0, 0.5, 1.25, 0.8)

@dataclass(frozen=True)
class QuantileConfig:
    hidden: tuple = (64, 64)
    epochs: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 256

    @property
    def schedule(self):
        return Schedule(self.epochs, self.batch_size, self.learning_rate)

    def to_document(self):
        return dict(asdict(self), hidden=list(self.hidden))

    @classmethod
    def from_document(cls, document):
        document = dict(document)
        if 'hidden' in document:
            document['hidden'] = tuple(int(width) for width in document['hidden'])
        return cls(**document)

# ### Pinball loss

def pinball_loss(prediction, target, tau):
    diff = np.asarray(target, dtype=np.float64) - prediction
    return float(np.mean(np.maximum(tau * diff, (tau - 1.0) * diff)))

# Gradient of the mean pinball loss with respect to each prediction. At an
# exact hit the subgradient 0 is used.
def pinball_gradient(prediction, target, tau):
    diff = np.asarray(target, dtype=np.float64) - prediction
    slope = np.where(diff > 0.0, -tau, np.where(diff < 0.0, 1.0 - tau, 0.0))
    return slope / diff.shape[0]

# ### Quantile networks

@dataclass
class QuantilePair:
    lower: list
    upper: list
    levels: tuple
    x_scaler: Scaler
    y_scaler: Scaler
    losses: dict = field(default_factory=dict)

    @property
    def q(self):
        return len(self.lower)

    @property
    def p(self):
        return self.lower[0].in_width

    # The lower and upper quantile estimates in original units.
    def predict(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xs = self.x_scaler.transform(x.reshape(1, -1) if single else x)
        lower = np.column_stack([net_forward(net, xs).output[:, 0] for net in self.lower])
        upper = np.column_stack([net_forward(net, xs).output[:, 0] for net in self.upper])
        lower, upper = self.y_scaler.inverse(lower), self.y_scaler.inverse(upper)
        if single:
            return lower[0], upper[0]
        return lower, upper

def train_quantile_net(x, target, tau, config, rng, name='quantile'):
    net = init_net([x.shape[1], *config.hidden, 1], rng)
    # Starting at the empirical quantile leaves only the x dependence to learn.
    net.biases[-1][0] = np.quantile(target, tau)

    def objective(rows):
        trace = net_forward(net, x[rows])
        prediction = trace.output[:, 0]
        upstream = pinball_gradient(prediction, target[rows], tau)
        grads, _ = net_backward(net, x[rows], upstream[:, None], trace)
        return pinball_loss(prediction, target[rows], tau), flatten_grads(grads)

    losses = minimize(objective, net.parameters(), x.shape[0], config.schedule, rng, name=name)
    return net, losses

def train_quantile_nets(x, y, alpha, config=QuantileConfig(), seed=0):
    check_alpha(alpha)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if y.ndim == 1:
        y = y.reshape(-1, 1)
    if y.shape[0] == 0:
        raise ValueError('Cannot train quantile networks on an empty set')
    x_scaler = Scaler.fit(x, strict=False)
    y_scaler = Scaler.fit(y, strict=False)
    xs, ys = x_scaler.transform(x), y_scaler.transform(y)
    levels = (alpha / 2.0, 1.0 - alpha / 2.0)
    lower, upper, losses = [], [], {}
    for j in range(y.shape[1]):
        for side, tau, nets in (('lower', levels[0], lower), ('upper', levels[1], upper)):
            name = f'{side} quantile {j}'
            rng = rngs.generator(seed, 'quantile', j, side)
            try:
                net, trace = train_quantile_net(xs, ys[:, j], tau, config, rng, name)
            except DivergenceError:
                log.error('Training of the %s network diverged', name)
                raise
            nets.append(net)
            losses[name] = trace
    return QuantilePair(lower, upper, levels, x_scaler, y_scaler, losses)

# A pair whose estimates ignore x: lo(x) = lower, up(x) = upper.
def constant_quantiles(lower, upper, p, levels=(0.05, 0.95)):
    rng = rngs.generator(0, 'constant')
    nets = []
    for values in (lower, upper):
        side = []
        for value in values:
            net = init_net([p, 1], rng, zero_output=True)
            net.biases[-1][0] = value
            side.append(net)
        nets.append(side)
    q = len(lower)
    return QuantilePair(nets[0], nets[1], levels, Scaler.identity(p), Scaler.identity(q))

# ### Scores and regions

def uniform_weights(q):
    return np.ones((q, 2))

def check_weights(weights, q):
    weights = np.asarray(weights, dtype=np.float64).reshape(q, 2)
    if not np.all(weights > 0.0) or not np.all(np.isfinite(weights)):
        raise ValueError(f'Weights must be positive and finite, got {weights.tolist()}')
    return weights

def violation_score(lower, upper, y, weights):
    y = np.asarray(y, dtype=np.float64)
    below = weights[:, 0] * (lower - y)
    above = weights[:, 1] * (y - upper)
    return np.maximum(below, above).max(axis=-1)

def mcqr_score(x, y, pair, weights):
    weights = check_weights(weights, pair.q)
    lower, upper = pair.predict(x)
    score = violation_score(lower, upper, y, weights)
    return float(score) if np.ndim(score) == 0 else score

def mcqr_calibrate(x, y, pair, weights, alpha):
    return conformal_quantile(mcqr_score(x, y, pair, weights), alpha)

@dataclass
class BoxRegion:
    lower: np.ndarray
    upper: np.ndarray

    # A negative threshold can shrink a side past zero length.
    @property
    def empty(self):
        return bool(np.any(self.lower > self.upper))

    def to_document(self):
        return {
            'lower': self.lower.tolist(),
            'upper': self.upper.tolist(),
            'empty': self.empty,
            'volume': box_volume(self),
        }

def expand_box(lower, upper, weights, threshold):
    if not bounded(threshold):
        return np.full_like(lower, -np.inf), np.full_like(upper, np.inf)
    return lower - threshold / weights[:, 0], upper + threshold / weights[:, 1]

def mcqr_region(x, pair, weights, threshold):
    weights = check_weights(weights, pair.q)
    lower, upper = pair.predict(np.asarray(x, dtype=np.float64).reshape(-1))
    return BoxRegion(*expand_box(lower, upper, weights, threshold))

def box_volume(box):
    if box.empty:
        return 0.0
    return float(np.prod(box.upper - box.lower))

# Average calibrated volume of the boxes at the rows of ``lower``/``upper``,
# with the threshold recalibrated on the same rows for every candidate weight.
def _average_volume(lower, upper, y, weights, alpha):
    threshold = conformal_quantile(violation_score(lower, upper, y, weights), alpha)
    if not bounded(threshold):
        return UNBOUNDED
    low, high = expand_box(lower, upper, weights, threshold)
    sides = np.clip(high - low, 0.0, None)
    return float(np.mean(np.prod(sides, axis=1)))

# Cyclic coordinate search over the 2q weights with multiplicative steps.
# Stops after ``sweeps`` sweeps or when a sweep improves the objective by less
# than ``tolerance`` relative. The result is rescaled so its smallest entry is 1
# and is never worse than uniform weights.
def optimize_weights(x, y, pair, alpha, sweeps=50, tolerance=1e-3):
    y = np.asarray(y, dtype=np.float64).reshape(-1, pair.q)
    lower, upper = pair.predict(np.asarray(x, dtype=np.float64).reshape(len(y), -1))
    weights = uniform_weights(pair.q)
    uniform = best = _average_volume(lower, upper, y, weights, alpha)
    if not np.isfinite(best):
        log.warning('Weight search needs a bounded threshold; keeping uniform weights')
        return weights
    for sweep in range(sweeps):
        start = best
        for index in np.ndindex(weights.shape):
            for step in WEIGHT_STEPS:
                candidate = weights.copy()
                candidate[index] *= step
                value = _average_volume(lower, upper, y, candidate, alpha)
                if value < best:
                    weights, best = candidate, value
        log.debug('Weight sweep %d: average volume %.6g', sweep, best)
        if start - best < tolerance * start:
            break
    if not best <= uniform:
        return uniform_weights(pair.q)
    return weights / weights.min()

# ### Fitted method

@dataclass
class McqrPredictor:
    pair: QuantilePair
    weights: np.ndarray
    threshold: float
    alpha: float

    def scores(self, x, y):
        return np.atleast_1d(mcqr_score(x, y, self.pair, self.weights))

    def region(self, x):
        return mcqr_region(x, self.pair, self.weights, self.threshold)

    # Membership is the score test against the threshold. The expanded box is
    # for drawing and volume only.
    def contains(self, x, y):
        return np.asarray(mcqr_score(x, y, self.pair, self.weights) <= self.threshold)

    # Closed form, so the standard error is zero.
    def volume(self, x, samples=None, seed=None):
        return VolumeEstimate(box_volume(self.region(x)), 0.0, 0, seed)

# Splits d2 in half: the weights are searched on the first half and the
# threshold is calibrated on the second, so the calibration scores stay
# exchangeable with test scores.
def mcqr_conformalize(pair, d2, alpha, seed=0, optimize=True):
    if optimize:
        first, second = subdivide(np.arange(len(d2)), 0.5, rngs.derive(seed, 'weights'))
        weights = optimize_weights(d2.x[first], d2.y[first], pair, alpha)
    else:
        second = np.arange(len(d2))
        weights = uniform_weights(pair.q)
    threshold = mcqr_calibrate(d2.x[second], d2.y[second], pair, weights, alpha)
    log.info('MCQR threshold %.4f with weights %s', threshold, weights.ravel().tolist())
    return McqrPredictor(pair, weights, threshold, alpha)

def mcqr_fit(d1, d2, alpha, config=QuantileConfig(), seed=0, optimize=True):
    pair = train_quantile_nets(d1.x, d1.y, alpha, config, seed)
    return mcqr_conformalize(pair, d2, alpha, seed, optimize)

# Options are a quantile configuration document plus ``optimize_weights``.
def mcqr_options(options):
    options = dict(options)
    optimize = options.pop('optimize_weights', True)
    return QuantileConfig.from_document(options), optimize

def train_mcqr(train, alpha, options, seed):
    config, _ = mcqr_options(options)
    return train_quantile_nets(train.x, train.y, alpha, config, seed)

def pair_to_document(pair):
    return {
        'kind': 'quantiles',
        'version': 1,
        'levels': list(pair.levels),
        'lower': [net_to_document(net) for net in pair.lower],
        'upper': [net_to_document(net) for net in pair.upper],
        'x_scaler': pair.x_scaler.to_document(),
        'y_scaler': pair.y_scaler.to_document(),
        'losses': pair.losses,
    }

def pair_from_document(document):
    return QuantilePair(
        [net_from_document(net) for net in document['lower']],
        [net_from_document(net) for net in document['upper']],
        tuple(document['levels']),
        Scaler.from_document(document['x_scaler']),
        Scaler.from_document(document['y_scaler']),
        dict(document.get('losses', {})),
    )

def mcqr_to_document(predictor):
    return {
        'kind': 'mcqr',
        'version': 1,
        'quantiles': pair_to_document(predictor.pair),
        'weights': predictor.weights.tolist(),
        'threshold': predictor.threshold if bounded(predictor.threshold) else None,
        'alpha': predictor.alpha,
    }

def mcqr_from_document(document):
    threshold = document['threshold']
    return McqrPredictor(
        pair_from_document(document['quantiles']),
        np.asarray(document['weights'], dtype=np.float64),
        UNBOUNDED if threshold is None else float(threshold),
        document['alpha'],
    )

@region_method(
    'MCQR',
    train=train_mcqr,
    save_model=pair_to_document,
    load_model=pair_from_document,
    save_fitted=mcqr_to_document,
    load_fitted=mcqr_from_document,
)
def calibrate_mcqr(pair, calibration, alpha, options, seed):
    _, optimize = mcqr_options(options)
    return mcqr_conformalize(pair, calibration, alpha, seed, optimize)
