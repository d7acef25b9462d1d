import numpy as np
import pytest

from flowregion import rng as rngs
from flowregion.conformal import ConformalPredictor, calibrate, conformal_radius
from flowregion.data import Dataset
from flowregion.flow import FlowConfig, flow_inverse
from flowregion.predictors import KernelRidge, PointPredictor, ZeroPredictor
from flowregion.registry import methods
from flowregion.rescontra import *

# Cases for residual flow regions:

QUICK = FlowConfig(layers=2, hidden=(8,), epochs=3, batch_size=64)

def trend(n, seed):
    rng = rngs.generator(seed, 'trend')
    x = rng.uniform(-2.0, 2.0, (n, 2))
    y = np.column_stack([3.0 * x[:, 0], x[:, 0] * x[:, 1]]) + 0.3 * rng.standard_normal((n, 2))
    return Dataset(x, y, f'trend({seed})')

def parts(n=300, seed=0):
    dataset = trend(n, seed)
    third = n // 3
    return (
        dataset.subset(np.arange(third)),
        dataset.subset(np.arange(third, 2 * third)),
        dataset.subset(np.arange(2 * third, n)),
    )

def fitted(alpha=0.1, predictor=None):
    d1, d2, d3 = parts()
    return rescontra_fit(d1, d2, d3, alpha, QUICK, predictor or KernelRidge(), seed=4)

# * Are parts sharing records refused, wherever the overlap is?
def test_overlapping_parts():
    d1, d2, d3 = parts()
    clash = d1.subset([0, 1, 2])

    with pytest.raises(SplitError, match='3 records'):
        rescontra_fit(d1, clash, d3, 0.1, QUICK)
    bundle = rescontra_train(d1, d2, QUICK)
    with pytest.raises(SplitError, match='used for the flow'):
        rescontra_calibrate(bundle, d2, 0.1)

# * Do parts from different sources never clash?
def test_independent_sources():
    d1, _, _ = parts(seed=0)
    _, d2, d3 = parts(seed=1)

    bundle = rescontra_fit(d1.subset(np.arange(50)), d2, d3, 0.1, QUICK)

    assert bundle.ball.count == len(d3)

# * Are empty parts refused?
def test_empty_parts():
    d1, d2, d3 = parts()

    with pytest.raises(SplitError):
        rescontra_train(d1.subset([]), d2, QUICK)
    with pytest.raises(SplitError):
        rescontra_calibrate(rescontra_train(d1, d2, QUICK), d3.subset([]), 0.1)

# * Is the radius the conformal order statistic of the residual latent norms?
def test_residual_radius():
    bundle = fitted()
    _, _, d3 = parts()

    scores = bundle.scores(d3.x, d3.y)

    assert bundle.threshold == conformal_radius(bundle.calibration, 0.1).radius
    assert np.array_equal(np.sort(scores), bundle.calibration.norms)
    assert np.array_equal(bundle.contains(d3.x, d3.y), scores <= bundle.threshold)

# * With a zero point predictor, is the region the plain flow region?
def test_zero_predictor():
    bundle = fitted(predictor=ZeroPredictor())
    _, _, d3 = parts()
    plain = ConformalPredictor(bundle.model, calibrate(bundle.model, d3.x, d3.y), alpha=0.1)

    assert bundle.threshold == plain.threshold
    assert np.array_equal(bundle.contains(d3.x, d3.y), plain.contains(d3.x, d3.y))

# * Shifted back by the prediction, do boundary points have residual latent
#   norm r?
def test_boundary_norms():
    bundle = fitted()
    x = np.array([0.5, -1.0])

    boundary = bundle.boundary(x, 128)
    z, _ = flow_inverse(boundary.points - bundle.predictor.predict(x), x, bundle.model)

    assert np.all(np.abs(np.linalg.norm(z, axis=1) - bundle.threshold) < 1e-6)

# * Is the region's volume the residual region's volume, unchanged by the
#   shift?
def test_volume():
    bundle = fitted()

    first = bundle.volume([0.5, -1.0], 2000, 3)
    second = rescontra_volume(bundle, [0.5, -1.0], 2000, 3)

    assert first.estimate == second.estimate
    assert first.estimate > 0.0 and first.stderr >= 0.0

# * Are samples centred on the point prediction plus the residual flow?
def test_sample():
    bundle = fitted()
    x = np.array([1.0, 0.0])

    draws = bundle.sample(x, 500, seed=2)

    assert draws.shape == (500, 2)
    assert np.array_equal(draws, bundle.sample(x, 500, seed=2))
    assert np.all(np.abs(draws.mean(axis=0) - bundle.predictor.predict(x)) < 1.0)

# * Do other levels come from the kept latents, and do uncalibrated bundles
#   refuse?
def test_levels():
    bundle = fitted()
    d1, d2, _ = parts()

    assert bundle.at_level(0.5).threshold <= bundle.threshold
    assert bundle.at_level(0.5).alpha == 0.5
    with pytest.raises(SplitError):
        rescontra_train(d1, d2, QUICK).at_level(0.5)

# * Is a bundle read back from its document with its calibration and record
#   numbers?
def test_document():
    bundle = fitted()
    _, _, d3 = parts()

    copy = bundle_from_document(bundle_to_document(bundle))

    assert copy.threshold == bundle.threshold
    assert np.array_equal(copy.scores(d3.x, d3.y), bundle.scores(d3.x, d3.y))
    assert np.array_equal(copy.rows['calibration'], d3.rows)
    assert copy.provenance == bundle.provenance
    with pytest.raises(SplitError):
        rescontra_calibrate(copy, d3, 0.1)

# * Does the registered method split its training part between the predictor
#   and the flow?
def test_registered_method():
    d1, d2, d3 = parts()
    train = Dataset(np.vstack([d1.x, d2.x]), np.vstack([d1.y, d2.y]), 'joined')
    options = dict(QUICK.to_document(), inner=0.5, bandwidth=1.0, ridge=1e-3)

    bundle = methods.find('ResCONTRA').fit(train, d3, 0.1, options, 11)

    assert len(bundle.rows['predictor']) == len(bundle.rows['flow']) == 100
    assert bundle.ball.count == len(d3)

# * Translating every y by a constant and refitting, does the region move by
#   that constant?
def test_translation():
    d1, d2, d3 = parts()
    shift = np.array([5.0, -3.0])

    def moved(part):
        return Dataset(part.x, part.y + shift, part.provenance, part.rows)

    bundle = rescontra_fit(d1, d2, d3, 0.1, QUICK, KernelRidge(), seed=4)
    shifted = rescontra_fit(moved(d1), moved(d2), moved(d3), 0.1, QUICK, KernelRidge(), seed=4)
    x = np.array([0.5, -1.0])

    assert np.allclose(shifted.predictor.predict(d3.x), bundle.predictor.predict(d3.x) + shift)
    assert np.isclose(shifted.threshold, bundle.threshold, rtol=1e-6)
    assert np.allclose(shifted.boundary(x, 64).points, bundle.boundary(x, 64).points + shift,
                       atol=1e-6)

# Predicts the noiseless trend exactly.
class TrendPredictor(PointPredictor):
    def fit(self, x, y):
        return self

    def predict(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.column_stack([3.0 * x[:, 0], x[:, 0] * x[:, 1]])

# * With a perfect point predictor and standard Gaussian noise, is the
#   residual radius near the chi quantile with two degrees of freedom?
def test_perfect_predictor_radius():
    rng = rngs.generator(12, 'perfect')
    x = rng.uniform(-2.0, 2.0, (1600, 2))
    y = TrendPredictor().predict(x) + rng.standard_normal((1600, 2))
    data = Dataset(x, y, 'perfect')

    bundle = rescontra_fit(
        data.subset(np.arange(300)), data.subset(np.arange(300, 600)),
        data.subset(np.arange(600, 1600)), 0.1, QUICK, TrendPredictor(), seed=5)

    assert bundle.ball.count == 1000
    assert abs(bundle.threshold - 2.1460) < 0.1 * 2.1460
