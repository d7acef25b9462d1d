# ## Conformal regions from flow latents
#
# A trained flow maps each calibration pair to a latent ``z = t^-1(y, x)``. The
# calibrated radius is an order statistic of the latent norms, and the
# prediction region at x is the forward image of the latent ball of that
# radius. Because the flow is a bijection, y lies in the region exactly when
# ``||t^-1(y, x)|| <= r``, so membership never needs the region's shape.
#
# The order statistic is the ceil((1 - alpha)(n + 1))-th smallest of n
# calibration scores. When that index exceeds n the region is the whole space,
# represented by the radius ``UNBOUNDED`` (positive infinity): membership is
# always true, and boundary and volume queries raise ``RegionError``.

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, stats

from . import rng as rngs
from .flow import (
    FlowConfig, flow_forward, flow_from_document, flow_inverse, flow_to_document,
    forward_with_logdet, latent_draws, train_flow,
)
from .montecarlo import VolumeEstimate, ball_volume, image_volume, uniform_in_ball
from .registry import region_method

log = logging.getLogger(__name__)

UNBOUNDED = math.inf

# Raised for an empty calibration set or a miscoverage level outside (0, 1).
class CalibrationError(Exception):
    pass

# Raised when a region cannot answer a query: boundaries and volumes of the
# whole space, or bad sampling budgets.
class RegionError(Exception):
    pass

def check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise CalibrationError(f'Miscoverage level must lie in (0, 1), got {alpha}')

# The 1-based rank of the calibrated order statistic among n scores. The
# small tolerance keeps products such as 0.9 * 10 from rounding up past an
# integer.
def order_statistic_rank(n, alpha):
    check_alpha(alpha)
    return int(math.ceil((1.0 - alpha) * (n + 1) - 1e-9))

# The calibrated threshold for ``scores``: the rank-k smallest score, ties
# kept, or ``UNBOUNDED`` when k > n. Every method in the package calibrates
# through this function.
def conformal_quantile(scores, alpha):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = scores.shape[0]
    if n == 0:
        raise CalibrationError('Cannot calibrate on an empty set')
    k = order_statistic_rank(n, alpha)
    if k > n:
        return UNBOUNDED
    return float(np.partition(scores, k - 1)[k - 1])

# The exact coverage of the calibrated threshold for continuous, exchangeable
# scores: k / (n + 1), or 1 when the threshold is unbounded.
def expected_coverage(n, alpha):
    k = order_statistic_rank(n, alpha)
    return 1.0 if k > n else k / (n + 1)

def bounded(radius):
    return math.isfinite(radius)

# ### Calibration

@dataclass
class LatentCalibration:
    latents: np.ndarray
    norms: np.ndarray

    @property
    def count(self):
        return self.norms.shape[0]

@dataclass
class ConformalBall:
    radius: float
    alpha: float
    count: int

    @property
    def bounded(self):
        return bounded(self.radius)

def calibrate(model, x, y):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y.reshape(-1, model.q)
    if y.shape[0] == 0:
        raise CalibrationError('Cannot calibrate on an empty set')
    latents, _ = flow_inverse(y, x, model)
    norms = np.sort(np.linalg.norm(latents, axis=1))
    return LatentCalibration(latents, norms)

def conformal_radius(calibration, alpha):
    return ConformalBall(conformal_quantile(calibration.norms, alpha), alpha, calibration.count)

# The uncalibrated ball: the (1 - alpha) highest-probability ball of the
# standard Gaussian. Its coverage is only as good as the flow's fit.
def naive_ball(q, alpha):
    check_alpha(alpha)
    return ConformalBall(float(stats.chi.ppf(1.0 - alpha, q)), alpha, 0)

# ### Region queries

# Whether y lies in the region at x. Rows of y and x are paired; a single x is
# shared by every y.
def region_contains(model, ball, x, y):
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    if not ball.bounded:
        return True if single else np.ones(y.shape[0], dtype=bool)
    z, _ = flow_inverse(y, x, model)
    inside = np.linalg.norm(np.atleast_2d(z), axis=1) <= ball.radius
    return bool(inside[0]) if single else inside

@dataclass
class RegionBoundary:
    x: np.ndarray
    points: np.ndarray
    closed: bool = False
    radius: float = None

def _check_bounded(ball, query):
    if not ball.bounded:
        raise RegionError(f'The {query} of an unbounded region is undefined')

# Points on the latent sphere of radius r, in the order they are emitted:
# an even angular sweep for q = 2, the two endpoints for q = 1, seeded uniform
# directions otherwise.
def sphere_points(q, radius, m_points, seed):
    if q == 1:
        return np.array([[-radius], [radius]])
    if q == 2:
        theta = 2.0 * math.pi * np.arange(m_points) / m_points
        return radius * np.column_stack([np.cos(theta), np.sin(theta)])
    g = rngs.generator(seed, 'boundary').standard_normal((m_points, q))
    return radius * g / np.linalg.norm(g, axis=1, keepdims=True)

def region_boundary(model, ball, x, m_points=256, seed=0):
    _check_bounded(ball, 'boundary')
    if m_points < 3:
        raise RegionError(f'A boundary needs at least 3 points, got {m_points}')
    x = np.asarray(x, dtype=np.float64)
    z = sphere_points(model.q, ball.radius, m_points, seed)
    points = np.atleast_2d(flow_forward(z, x, model))
    return RegionBoundary(x, points, closed=model.q == 2, radius=ball.radius)

# Monte Carlo volume of the region at x: the latent ball's volume times the
# mean forward Jacobian determinant over uniform points in the ball.
def region_volume(model, ball, x, samples=10000, seed=0):
    _check_bounded(ball, 'volume')
    if samples < 100:
        raise RegionError(f'Volume estimation needs at least 100 samples, got {samples}')
    rng = rngs.generator(seed, 'volume')
    z = uniform_in_ball(rng, samples, model.q, ball.radius)
    _, logdet = forward_with_logdet(z, np.asarray(x, dtype=np.float64), model)
    estimate = image_volume(ball_volume(model.q, ball.radius), np.exp(logdet), seed)
    return VolumeEstimate(estimate.estimate, estimate.stderr, samples, seed)

# Membership of the region at x on a resolution x resolution grid over the box
# [lower, upper] (q = 2 only). Rows index the second coordinate.
def region_raster(model, ball, x, lower, upper, resolution=300):
    if model.q != 2:
        raise RegionError(f'Rasters are two-dimensional, the model has q={model.q}')
    first = np.linspace(lower[0], upper[0], resolution)
    second = np.linspace(lower[1], upper[1], resolution)
    grid_first, grid_second = np.meshgrid(first, second)
    points = np.column_stack([grid_first.ravel(), grid_second.ravel()])
    inside = region_contains(model, ball, x, points)
    return np.asarray(inside).reshape(resolution, resolution)

# Number of 4-connected components of a boolean raster.
def count_components(mask):
    structure = ndimage.generate_binary_structure(2, 1)
    _, count = ndimage.label(np.asarray(mask, dtype=bool), structure=structure)
    return int(count)

# The boundary's bounding box widened by ``margin`` of its extent on each side.
def bounding_box(points, margin=0.1):
    points = np.atleast_2d(points)
    lower, upper = points.min(axis=0), points.max(axis=0)
    pad = margin * np.maximum(upper - lower, 1e-12)
    return lower - pad, upper + pad

# ### Latent diagnostics

class Dispersion(enum.Enum):
    OK = 'OK'
    OVER_DISPERSED = 'OVER_DISPERSED'
    UNDER_DISPERSED = 'UNDER_DISPERSED'

DIAGNOSTIC_LEVELS = (0.25, 0.5, 0.75, 0.9)
LATENT_WINDOW = 7.5

@dataclass
class LatentDiagnostics:
    mean: np.ndarray
    covariance: np.ndarray
    quantile_ratios: dict
    ks_statistic: float
    outside_fraction: float
    flag: Dispersion
    factor: float
    count: int

    def to_document(self):
        return {
            'mean': self.mean.tolist(),
            'covariance': self.covariance.tolist(),
            'quantile_ratios': {str(level): ratio for level, ratio in self.quantile_ratios.items()},
            'ks_statistic': self.ks_statistic,
            'outside_fraction': self.outside_fraction,
            'flag': self.flag.value,
            'factor': self.factor,
            'count': self.count,
        }

# Compares calibration latents with a standard Gaussian sample. Norm quantiles
# are divided by the matching chi_q quantiles; the median ratio decides the
# flag. A well-fitted flow gives ratios near 1.
def latent_diagnostics(calibration, factor=1.25):
    if calibration.count < 20:
        raise CalibrationError(f'Diagnostics need at least 20 latents, got {calibration.count}')
    if not factor > 1.0:
        raise CalibrationError(f'Dispersion factor must exceed 1, got {factor}')
    latents = calibration.latents
    q = latents.shape[1]
    ratios = {
        level: float(np.quantile(calibration.norms, level) / stats.chi.ppf(level, q))
        for level in DIAGNOSTIC_LEVELS
    }
    median = ratios[0.5]
    if median > factor:
        flag = Dispersion.OVER_DISPERSED
    elif median < 1.0 / factor:
        flag = Dispersion.UNDER_DISPERSED
    else:
        flag = Dispersion.OK
    ks = stats.kstest(calibration.norms, stats.chi(q).cdf).statistic
    outside = float(np.mean(np.any(np.abs(latents) > LATENT_WINDOW, axis=1)))
    covariance = np.atleast_2d(np.cov(latents, rowvar=False))
    log.info('Latent diagnostics: median ratio %.3f, flag %s', median, flag.value)
    return LatentDiagnostics(
        latents.mean(axis=0), covariance, ratios, float(ks), outside, flag, factor,
        calibration.count,
    )

# ### Predictor

# A flow with its calibration: answers region queries at any level without
# recomputing latents.
@dataclass
class ConformalPredictor:
    model: object
    calibration: LatentCalibration
    ball: ConformalBall = None
    alpha: float = 0.1

    def __post_init__(self):
        if self.ball is None:
            self.ball = conformal_radius(self.calibration, self.alpha)
        self.alpha = self.ball.alpha

    def at_level(self, alpha):
        return ConformalPredictor(self.model, self.calibration, alpha=alpha)

    @property
    def threshold(self):
        return self.ball.radius

    def scores(self, x, y):
        z, _ = flow_inverse(y, x, self.model)
        return np.linalg.norm(np.atleast_2d(z), axis=1)

    def contains(self, x, y):
        return region_contains(self.model, self.ball, x, y)

    def boundary(self, x, m_points=256, seed=0):
        return region_boundary(self.model, self.ball, x, m_points, seed)

    def volume(self, x, samples=10000, seed=0):
        return region_volume(self.model, self.ball, x, samples, seed)

    # Draws of y from the flow at x, for drawing next to the region.
    def sample(self, x, n, seed=0):
        return flow_forward(latent_draws(self.model.q, n, seed), x, self.model)

    def diagnostics(self, factor=1.25):
        return latent_diagnostics(self.calibration, factor)

def fit_predictor(model, x, y, alpha):
    return ConformalPredictor(model, calibrate(model, x, y), alpha=alpha)

def ball_to_document(ball):
    return {
        'radius': ball.radius if ball.bounded else None,
        'alpha': ball.alpha,
        'count': ball.count,
    }

def ball_from_document(document):
    radius = document['radius']
    return ConformalBall(UNBOUNDED if radius is None else float(radius), document['alpha'], document['count'])

def predictor_to_document(predictor):
    return {
        'kind': 'contra',
        'version': 1,
        'flow': flow_to_document(predictor.model),
        'ball': ball_to_document(predictor.ball),
        'latents': predictor.calibration.latents.tolist(),
    }

def predictor_from_document(document):
    model = flow_from_document(document['flow'])
    latents = np.asarray(document['latents'], dtype=np.float64).reshape(-1, model.q)
    calibration = LatentCalibration(latents, np.sort(np.linalg.norm(latents, axis=1)))
    return ConformalPredictor(model, calibration, ball_from_document(document['ball']))

def train_contra(train, alpha, options, seed):
    return train_flow(train.x, train.y, FlowConfig.from_document(options), seed)

@region_method(
    'CONTRA',
    train=train_contra,
    save_model=flow_to_document,
    load_model=flow_from_document,
    save_fitted=predictor_to_document,
    load_fitted=predictor_from_document,
)
def calibrate_contra(model, calibration, alpha, options, seed):
    return fit_predictor(model, calibration.x, calibration.y, alpha)
