# ## Monte Carlo volume helpers

from collections import namedtuple

import numpy as np
from scipy.special import gammaln

# A volume estimate with its Monte Carlo standard error. Closed-form volumes
# carry a standard error of zero.
VolumeEstimate = namedtuple('VolumeEstimate', 'estimate stderr samples seed')

def unit_ball_volume(q):
    return float(np.exp(0.5 * q * np.log(np.pi) - gammaln(0.5 * q + 1.0)))

def ball_volume(q, radius):
    return unit_ball_volume(q) * radius**q

# ``n`` points uniform in the radius-``radius`` ball of R^q: a Gaussian
# direction scaled to radius * U^(1/q).
def uniform_in_ball(rng, n, q, radius=1.0):
    g = rng.standard_normal((n, q))
    directions = g / np.linalg.norm(g, axis=1, keepdims=True)
    radii = radius * rng.uniform(0.0, 1.0, size=n) ** (1.0 / q)
    return directions * radii[:, None]

# Importance-style estimate of the volume of the image of a ball under a map
# whose Jacobian determinants at uniform ball points are ``jacobians``.
def image_volume(ball, jacobians, seed=None):
    jacobians = np.asarray(jacobians, dtype=np.float64)
    n = jacobians.shape[0]
    stderr = ball * jacobians.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0
    return VolumeEstimate(float(ball * jacobians.mean()), float(stderr), n, seed)

# Hit-or-miss volume of the set ``contains`` accepts inside the box
# [lower, upper]: box volume times the fraction of uniform box points that hit.
# ``contains`` takes an (n, q) array and returns n booleans.
def hit_or_miss(contains, lower, upper, samples, rng, seed=None):
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    box = float(np.prod(upper - lower))
    points = rng.uniform(lower, upper, size=(samples, lower.shape[0]))
    hits = np.asarray(contains(points), dtype=bool)
    fraction = hits.mean()
    stderr = box * np.sqrt(fraction * (1.0 - fraction) / samples)
    return VolumeEstimate(box * float(fraction), float(stderr), samples, seed)
