# ## Baseline region methods
#
# PCP: draw K samples of y from the conditional flow at x; the score of a pair
# is the distance from y to the nearest sample, and the region is the union of
# the K balls of calibrated radius around fresh samples. The samples at a given
# x are regenerated from (seed, digest of x), so repeated queries agree.
#
# RCP: a point predictor gives the centre, and one global residual covariance
# shapes an ellipsoid. The score is the Mahalanobis distance of the residual,
# and the region is the ellipsoid of calibrated radius.

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import rng as rngs
from .conformal import UNBOUNDED, RegionBoundary, RegionError, bounded, conformal_quantile, sphere_points
from .data import subdivide
from .flow import (
    FlowConfig, flow_forward, flow_from_document, flow_to_document, latent_draws, train_flow,
)
from .montecarlo import VolumeEstimate, hit_or_miss, unit_ball_volume
from .predictors import KernelRidge, predictor_from_document
from .registry import region_method

log = logging.getLogger(__name__)

DEFAULT_K = 40

# ### PCP

def _check_k(k):
    if k < 1:
        raise ValueError(f'PCP needs at least one sample per point, got K={k}')

def sample_seed(seed, x):
    return rngs.derive(seed, 'pcp', rngs.digest(np.asarray(x, dtype=np.float64)))

# K conditional samples at every row of x: real[m, K, q], or real[K, q] for a
# single x.
def pcp_samples(model, x, k, seed):
    _check_k(k)
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xs = x.reshape(1, -1) if single else x
    z = np.concatenate([latent_draws(model.q, k, sample_seed(seed, row)) for row in xs])
    y = flow_forward(z, np.repeat(xs, k, axis=0), model).reshape(len(xs), k, model.q)
    return y[0] if single else y

# Distance from y to the nearest of ``samples`` (the last two axes are sample
# and coordinate).
def min_distance(samples, y):
    y = np.asarray(y, dtype=np.float64)
    return np.linalg.norm(samples - y[..., None, :], axis=-1).min(axis=-1)

def pcp_score(model, x, y, k=DEFAULT_K, seed=0):
    score = min_distance(pcp_samples(model, x, k, seed), y)
    return float(score) if np.ndim(score) == 0 else score

# Volume of a union of equal balls: hit-or-miss over the centres' bounding box
# widened by the radius.
def union_volume(centers, radius, samples=10000, seed=0):
    centers = np.atleast_2d(centers)
    lower, upper = centers.min(axis=0) - radius, centers.max(axis=0) + radius

    def contains(points):
        return min_distance(centers, points) <= radius

    return hit_or_miss(contains, lower, upper, samples, rngs.generator(seed, 'union'), seed)

@dataclass
class PcpPredictor:
    model: object
    k: int
    threshold: float
    alpha: float
    seed: int = 0

    def __post_init__(self):
        _check_k(self.k)

    def centers(self, x):
        return pcp_samples(self.model, x, self.k, self.seed)

    def scores(self, x, y):
        return np.atleast_1d(pcp_score(self.model, x, y, self.k, self.seed))

    def contains(self, x, y):
        return pcp_contains(self, x, y)

    def volume(self, x, samples=10000, seed=0):
        return pcp_volume(self, x, samples, seed)

def pcp_calibrate(model, x, y, k, alpha, seed=0):
    scores = pcp_score(model, x, y, k, seed)
    threshold = conformal_quantile(scores, alpha)
    log.info('PCP threshold %.4f with K=%d', threshold, k)
    return PcpPredictor(model, k, threshold, alpha, seed)

def pcp_contains(predictor, x, y):
    y = np.asarray(y, dtype=np.float64)
    if not bounded(predictor.threshold):
        return True if y.ndim == 1 else np.ones(y.shape[0], dtype=bool)
    inside = min_distance(predictor.centers(x), y) <= predictor.threshold
    return bool(inside) if np.ndim(inside) == 0 else inside

def pcp_volume(predictor, x, samples=10000, seed=0):
    if not bounded(predictor.threshold):
        return VolumeEstimate(np.inf, 0.0, 0, seed)
    return union_volume(predictor.centers(np.asarray(x, dtype=np.float64)),
                        predictor.threshold, samples, seed)

def pcp_options(options):
    options = dict(options)
    k = int(options.pop('k', DEFAULT_K))
    return FlowConfig.from_document(options), k

def train_pcp(train, alpha, options, seed):
    config, _ = pcp_options(options)
    return train_flow(train.x, train.y, config, seed)

def pcp_to_document(predictor):
    return {
        'kind': 'pcp',
        'version': 1,
        'flow': flow_to_document(predictor.model),
        'k': predictor.k,
        'threshold': predictor.threshold if bounded(predictor.threshold) else None,
        'alpha': predictor.alpha,
        'seed': predictor.seed,
    }

def pcp_from_document(document):
    threshold = document['threshold']
    return PcpPredictor(
        flow_from_document(document['flow']),
        int(document['k']),
        UNBOUNDED if threshold is None else float(threshold),
        document['alpha'],
        document['seed'],
    )

@region_method(
    'PCP',
    train=train_pcp,
    save_model=flow_to_document,
    load_model=flow_from_document,
    save_fitted=pcp_to_document,
    load_fitted=pcp_from_document,
)
def calibrate_pcp(model, calibration, alpha, options, seed):
    _, k = pcp_options(options)
    return pcp_calibrate(model, calibration.x, calibration.y, k, alpha, rngs.derive(seed, 'pcp'))

# ### RCP

@dataclass
class EllipsoidModel:
    predictor: object
    covariance: np.ndarray
    factor: np.ndarray = None

    def __post_init__(self):
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        if self.factor is None:
            self.covariance, self.factor = regularized_cholesky(self.covariance)

    @property
    def q(self):
        return self.covariance.shape[0]

    def distance(self, x, y):
        residual = np.asarray(y, dtype=np.float64) - self.predictor.predict(x)
        single = residual.ndim == 1
        white = linalg.solve_triangular(self.factor, np.atleast_2d(residual).T, lower=True)
        distance = np.linalg.norm(white, axis=0)
        return float(distance[0]) if single else distance

# Adds a growing ridge to the diagonal until the Cholesky factorization
# succeeds. Returns the (possibly regularized) covariance and its lower factor.
def regularized_cholesky(covariance, ridge=1e-10, attempts=20):
    covariance = 0.5 * (covariance + covariance.T)
    scale = max(float(np.mean(np.diag(covariance))), 1e-300)
    regularized = covariance
    for attempt in range(attempts):
        try:
            return regularized, linalg.cholesky(regularized, lower=True)
        except linalg.LinAlgError:
            bump = ridge * scale * 10.0**attempt
            log.warning('Residual covariance is not positive definite, adding ridge %g', bump)
            regularized = covariance + bump * np.eye(len(covariance))
    raise linalg.LinAlgError('Residual covariance could not be regularized')

# Fits the centre predictor on ``inner`` of the rows and takes the residual
# covariance on the rest, so the covariance reflects out-of-sample error.
def rcp_fit(x, y, predictor=None, inner=0.6, seed=0):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if predictor is None:
        predictor = KernelRidge()
    first, second = subdivide(np.arange(len(y)), inner, rngs.derive(seed, 'rcp'))
    predictor.fit(x[first], y[first])
    residuals = y[second] - predictor.predict(x[second])
    covariance = np.atleast_2d(np.cov(residuals, rowvar=False))
    return EllipsoidModel(predictor, covariance)

@dataclass
class RcpPredictor:
    model: EllipsoidModel
    threshold: float
    alpha: float

    def scores(self, x, y):
        return np.atleast_1d(self.model.distance(x, y))

    def contains(self, x, y):
        return rcp_contains(self, x, y)

    def boundary(self, x, m_points=256, seed=0):
        return rcp_boundary(self, x, m_points, seed)

    def volume(self, x, samples=None, seed=None):
        return rcp_volume(self, x)

def rcp_calibrate(model, x, y, alpha):
    threshold = conformal_quantile(model.distance(x, y), alpha)
    log.info('RCP threshold %.4f', threshold)
    return RcpPredictor(model, threshold, alpha)

def rcp_contains(predictor, x, y):
    y = np.asarray(y, dtype=np.float64)
    if not bounded(predictor.threshold):
        return True if y.ndim == 1 else np.ones(y.shape[0], dtype=bool)
    inside = np.asarray(predictor.model.distance(x, y)) <= predictor.threshold
    return bool(inside) if inside.ndim == 0 else inside

# The ellipsoid surface: the centre plus the covariance factor applied to
# points on the sphere of calibrated radius.
def rcp_boundary(predictor, x, m_points=256, seed=0):
    if not bounded(predictor.threshold):
        raise RegionError('The boundary of an unbounded region is undefined')
    x = np.asarray(x, dtype=np.float64)
    model = predictor.model
    sphere = sphere_points(model.q, predictor.threshold, m_points, seed)
    points = model.predictor.predict(x) + sphere @ model.factor.T
    return RegionBoundary(x, points, closed=model.q == 2, radius=predictor.threshold)

# Closed form: unit-ball volume times sqrt(det covariance) times radius^q. It
# does not depend on x.
def rcp_volume(predictor, x=None):
    model = predictor.model
    if not bounded(predictor.threshold):
        return VolumeEstimate(np.inf, 0.0, 0, None)
    root_det = float(np.prod(np.diag(model.factor)))
    volume = unit_ball_volume(model.q) * root_det * predictor.threshold**model.q
    return VolumeEstimate(volume, 0.0, 0, None)

# Hit-or-miss cross-check of ``rcp_volume`` over the ellipsoid's bounding box.
def rcp_volume_mc(predictor, x, samples=10000, seed=0):
    x = np.asarray(x, dtype=np.float64)
    center = predictor.model.predictor.predict(x)
    half = predictor.threshold * np.sqrt(np.diag(predictor.model.covariance))

    def contains(points):
        return np.asarray(predictor.model.distance(x, points)) <= predictor.threshold

    return hit_or_miss(contains, center - half, center + half, samples,
                       rngs.generator(seed, 'rcp volume'), seed)

def train_rcp(train, alpha, options, seed):
    options = dict(options)
    predictor = KernelRidge(options.pop('bandwidth', 1.0), options.pop('ridge', 1e-3))
    return rcp_fit(train.x, train.y, predictor, options.pop('inner', 0.6), seed)

def ellipsoid_to_document(model):
    return {
        'kind': 'ellipsoid',
        'version': 1,
        'predictor': model.predictor.to_document(),
        'covariance': model.covariance.tolist(),
    }

# The stored covariance is already regularized, so the factorization repeats
# exactly.
def ellipsoid_from_document(document):
    return EllipsoidModel(
        predictor_from_document(document['predictor']),
        np.asarray(document['covariance'], dtype=np.float64),
    )

def rcp_to_document(predictor):
    return {
        'kind': 'rcp',
        'version': 1,
        'ellipsoid': ellipsoid_to_document(predictor.model),
        'threshold': predictor.threshold if bounded(predictor.threshold) else None,
        'alpha': predictor.alpha,
    }

def rcp_from_document(document):
    threshold = document['threshold']
    return RcpPredictor(
        ellipsoid_from_document(document['ellipsoid']),
        UNBOUNDED if threshold is None else float(threshold),
        document['alpha'],
    )

@region_method(
    'RCP',
    train=train_rcp,
    save_model=ellipsoid_to_document,
    load_model=ellipsoid_from_document,
    save_fitted=rcp_to_document,
    load_fitted=rcp_from_document,
)
def calibrate_rcp(model, calibration, alpha, options, seed):
    return rcp_calibrate(model, calibration.x, calibration.y, alpha)
