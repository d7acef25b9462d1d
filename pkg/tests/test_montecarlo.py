import math

import numpy as np

from flowregion import rng as rngs
from flowregion.montecarlo import *

# Cases for Monte Carlo volume helpers:

# * Are unit-ball volumes the closed forms for q = 1 to 4?
def test_unit_ball_volume():
    assert math.isclose(unit_ball_volume(1), 2.0)
    assert math.isclose(unit_ball_volume(2), math.pi)
    assert math.isclose(unit_ball_volume(3), 4.0 / 3.0 * math.pi)
    assert math.isclose(unit_ball_volume(4), math.pi**2 / 2.0)
    assert math.isclose(ball_volume(2, 3.0), 9.0 * math.pi)

# * Are ball points inside the ball and spread by volume?
def test_uniform_in_ball():
    for q in (1, 2, 3, 5):
        points = uniform_in_ball(rngs.generator(q, 'ball'), 20000, q, 2.0)
        norms = np.linalg.norm(points, axis=1)
        inner = np.mean(norms <= 1.0)
        expected = 0.5**q
        se = math.sqrt(expected * (1.0 - expected) / 20000)

        assert points.shape == (20000, q)
        assert norms.max() <= 2.0
        assert abs(inner - expected) <= 4 * se

# * Given constant Jacobians, is the image volume exact with no error?
def test_constant_image_volume():
    estimate = image_volume(math.pi, np.full(500, 6.0), seed=3)

    assert math.isclose(estimate.estimate, 6.0 * math.pi)
    assert estimate.stderr == 0.0
    assert estimate.samples == 500 and estimate.seed == 3

# * Does hit-or-miss find half of a box cut by a diagonal?
def test_hit_or_miss():
    def below(points):
        return points[:, 1] < points[:, 0]

    estimate = hit_or_miss(below, [0.0, 0.0], [2.0, 2.0], 20000, rngs.generator(4, 'hits'))

    assert abs(estimate.estimate - 2.0) <= 3 * estimate.stderr
    assert estimate.samples == 20000
