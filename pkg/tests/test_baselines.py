import math

import numpy as np
import pytest
from hypothesis import given, settings

from flowregion import rng as rngs
from flowregion.conformal import UNBOUNDED, RegionError
from flowregion.evaluation import coverage_bound_trial
from flowregion.flow import FlowConfig, init_flow
from flowregion.predictors import ZeroPredictor
from flowregion.baselines import *

from .nets import flows, gaussian_rows, seeds

# Cases for the PCP and RCP baselines:

def identity(p=1, q=2):
    return init_flow(p, q, FlowConfig(layers=2, hidden=(4,)))

def within(estimate, expected, width=3.0):
    return abs(estimate.estimate - expected) <= width * estimate.stderr + 1e-9 * expected

# * Is the score the distance to the nearest sample?
def test_min_distance():
    samples = np.array([[0.0, 0.0], [2.0, 0.0]])

    assert math.isclose(min_distance(samples, [1.0, 1.0]), math.sqrt(2.0))
    assert min_distance(samples, [2.0, 0.0]) == 0.0
    assert np.allclose(min_distance(samples, np.array([[1.0, 1.0], [0.0, 3.0]])), [math.sqrt(2.0), 3.0])

# * Given more samples from the same seed, can the score only shrink?
@settings(deadline=None)
@given(flows(), seeds())
def test_score_shrinks_with_k(model, seed):
    z, x = gaussian_rows(model, 20, seed)

    few = pcp_score(model, x, z, 5, seed)
    many = pcp_score(model, x, z, 10, seed)

    assert np.all(many <= few + 1e-12)

# * Are the samples at an x regenerated identically, and different at another
#   x?
def test_samples_reproducible():
    model = identity()

    first = pcp_samples(model, [0.5], 8, 3)

    assert first.shape == (8, 2)
    assert np.array_equal(first, pcp_samples(model, [0.5], 8, 3))
    assert not np.array_equal(first, pcp_samples(model, [0.6], 8, 3))
    assert np.array_equal(pcp_samples(model, [[0.5], [0.6]], 8, 3)[0], first)

# * Is a sample point inside the region at any radius, and K < 1 refused?
def test_sample_is_contained():
    predictor = PcpPredictor(identity(), 6, 0.0, 0.1, seed=2)
    centre = predictor.centers([1.0])[3]

    assert predictor.contains([1.0], centre)
    assert not predictor.contains([1.0], centre + 10.0)
    with pytest.raises(ValueError):
        PcpPredictor(identity(), 0, 1.0, 0.1)
    with pytest.raises(ValueError):
        pcp_score(identity(), [0.0], [0.0, 0.0], k=0)

# * Given the identity flow and one sample per point, does PCP coverage land
#   on k / (n + 1)?
def test_pcp_coverage_trial():
    model = identity()

    def source(count, seed):
        rng = rngs.generator(seed, 'pcp trial')
        x = rng.standard_normal((count, 1))
        y = rng.standard_normal((count, 2))
        return pcp_score(model, x, y, 1, seed)

    trial = coverage_bound_trial(19, 0.1, 1000, 5, source)

    assert trial.expected == 18 / 20
    assert trial.agrees()

# * Does hit-or-miss measure one disk, two disjoint disks and two coincident
#   disks correctly?
def test_union_volume():
    one = union_volume([[0.0, 0.0]], 1.0, 20000, 1)
    apart = union_volume([[0.0, 0.0], [5.0, 0.0]], 1.0, 20000, 2)
    together = union_volume([[1.0, 1.0], [1.0, 1.0]], 1.0, 20000, 3)

    assert within(one, math.pi)
    assert within(apart, 2 * math.pi)
    assert within(together, math.pi)

# * Is an unbounded PCP region everything, with infinite volume?
def test_unbounded_pcp():
    predictor = PcpPredictor(identity(), 3, UNBOUNDED, 0.1)

    assert predictor.contains([0.0], [1e6, 1e6]) is True
    assert predictor.volume([0.0]).estimate == math.inf

# * Does calibration on the identity flow give a threshold of the calibration
#   scores, and is the predictor read back from its document?
def test_pcp_calibrate_and_document():
    rng = rngs.generator(4, 'pcp')
    x, y = rng.standard_normal((39, 1)), rng.standard_normal((39, 2))

    predictor = pcp_calibrate(identity(), x, y, 4, 0.1, seed=9)
    copy = pcp_from_document(pcp_to_document(predictor))

    assert predictor.threshold == np.sort(predictor.scores(x, y))[35]
    assert copy.threshold == predictor.threshold
    assert np.array_equal(copy.contains(x, y), predictor.contains(x, y))

def ellipsoid(covariance, threshold=1.5):
    return RcpPredictor(EllipsoidModel(ZeroPredictor(2), covariance), threshold, 0.1)

# * Is the score the Mahalanobis distance of the residual?
def test_mahalanobis_score():
    predictor = ellipsoid(np.diag([4.0, 1.0]))

    assert math.isclose(predictor.model.distance([0.0], [2.0, 1.0]), math.sqrt(2.0))
    assert predictor.contains([0.0], [2.0, 1.0])
    assert not predictor.contains([0.0], [0.0, 1.6])

# * Is the closed-form volume pi r^2 for the identity covariance and 2 pi r^2
#   for diag(4, 1), in agreement with hit-or-miss?
def test_rcp_volume():
    round_ = ellipsoid(np.eye(2))
    stretched = ellipsoid(np.diag([4.0, 1.0]))
    tilted = ellipsoid(np.array([[2.0, 0.8], [0.8, 1.0]]))

    assert math.isclose(round_.volume([0.0]).estimate, math.pi * 1.5**2)
    assert math.isclose(stretched.volume([0.0]).estimate, 2 * math.pi * 1.5**2)
    for predictor in (round_, stretched, tilted):
        assert within(rcp_volume_mc(predictor, [0.0], 20000, 1), predictor.volume([0.0]).estimate)

# * Are boundary points at Mahalanobis distance r from the centre?
def test_rcp_boundary():
    predictor = ellipsoid(np.array([[2.0, 0.8], [0.8, 1.0]]))

    boundary = predictor.boundary([0.0], 64)

    assert np.allclose(predictor.model.distance([0.0], boundary.points), 1.5)
    with pytest.raises(RegionError):
        ellipsoid(np.eye(2), UNBOUNDED).boundary([0.0])

# * Is a singular covariance regularized until it factors?
def test_regularized_cholesky():
    covariance, factor = regularized_cholesky(np.ones((2, 2)))

    assert np.allclose(factor @ factor.T, covariance)
    assert np.all(np.linalg.eigvalsh(covariance) > 0.0)

# * Does the fitted covariance follow the held-out residuals?
def test_rcp_fit():
    rng = rngs.generator(6, 'rcp')
    x = rng.uniform(-2.0, 2.0, (1500, 1))
    y = np.column_stack([np.sin(x[:, 0]), x[:, 0]]) + rng.standard_normal((1500, 2)) * [0.5, 1.0]

    model = rcp_fit(x, y, seed=1)

    assert np.allclose(np.diag(model.covariance), [0.25, 1.0], rtol=0.2)
    assert abs(model.covariance[0, 1]) < 0.1

# * Is an RCP predictor read back from its document, unbounded included?
def test_rcp_document():
    rng = rngs.generator(7, 'rcp')
    x = rng.standard_normal((200, 1))
    y = x @ [[1.0, -1.0]] + rng.standard_normal((200, 2))
    predictor = rcp_calibrate(rcp_fit(x[:100], y[:100]), x[100:], y[100:], 0.1)

    copy = rcp_from_document(rcp_to_document(predictor))
    loose = rcp_from_document(rcp_to_document(ellipsoid(np.eye(2), UNBOUNDED)))

    assert copy.threshold == predictor.threshold
    assert np.array_equal(copy.scores(x, y), predictor.scores(x, y))
    assert loose.threshold == UNBOUNDED
    assert loose.contains(x, y).all()
