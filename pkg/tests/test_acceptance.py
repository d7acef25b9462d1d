import numpy as np
import pytest

from flowregion import rng as rngs
from flowregion.conformal import (
    bounding_box, calibrate, conformal_radius, count_components, region_raster,
)
from flowregion.data import SplitSpec, generate
from flowregion.evaluation import ExperimentConfig, coverage_bound_trial, pipeline_scores, run_experiment
from flowregion.flow import FlowConfig, flow_forward, flow_inverse, train_flow
from flowregion.registry import methods

from .nets import noise_dataset

# Cases at experiment scale. These train full-size models and take minutes;
# run them with --runslow.

pytestmark = pytest.mark.slow

DESK = {'layers': 6, 'hidden': (128, 128), 'epochs': 200, 'batch_size': 256}
DESK_OPTIONS = {
    'CONTRA': DESK,
    'ResCONTRA': dict(DESK, inner=0.6),
    'PCP': dict(DESK, k=40),
    'RCP': {'inner': 0.6},
    'MCQR': {'hidden': (64, 64), 'epochs': 200, 'batch_size': 256},
}

@pytest.fixture(scope='module')
def mixture_parts():
    dataset = generate('mixture', 5000, 0)
    return dataset.subset(np.arange(3375)), dataset.subset(np.arange(3375, 4500))

@pytest.fixture(scope='module')
def contra(mixture_parts):
    train, calibration = mixture_parts
    return methods.find('CONTRA').fit(train, calibration, 0.1, DESK, 1)

# * Given every method's own scores, do 20,000 trials with 99 calibration
#   scores land on 0.900?
def test_score_trials(mixture_parts):
    train, calibration = mixture_parts
    for name, options in DESK_OPTIONS.items():
        fitted = methods.find(name).fit(train, calibration, 0.1, options, 2)

        trial = coverage_bound_trial(99, 0.1, 20000, seed=3, source=pipeline_scores(fitted, 'mixture'))

        assert trial.expected == 0.9
        assert trial.agrees(), name

# * On the mixture model, is flow coverage near 0.9 with smaller regions than
#   the quantile boxes and the ellipsoid?
def test_mixture_experiment():
    experiment = ExperimentConfig(
        methods=['CONTRA', 'MCQR', 'RCP'], alpha=0.1, replications=10, seed=0,
        split=SplitSpec(3375, 1125, 500),
        options={name: DESK_OPTIONS[name] for name in ('CONTRA', 'MCQR', 'RCP')},
    )

    report = run_experiment(experiment, generate('mixture', 5000, 0))

    flow = report.summary('CONTRA')
    assert 0.88 <= flow.coverage_mean <= 0.93
    assert flow.volume_mean < report.summary('MCQR').volume_mean
    assert flow.volume_mean < report.summary('RCP').volume_mean

# * Does a trained ten-layer flow invert to within 1e-9?
def test_trained_roundtrip(mixture_parts):
    train, _ = mixture_parts
    model = train_flow(train.x, train.y, FlowConfig(layers=10, hidden=(64, 64), epochs=20), 4)
    rng = rngs.generator(4, 'roundtrip')
    z, x = rng.standard_normal((1000, 2)), train.x[rng.integers(0, len(train), 1000)]

    back, _ = flow_inverse(flow_forward(z, x, model), x, model)

    assert np.max(np.abs(back - z)) < 1e-9

# * Is the trained region at three test points a single connected piece whose
#   boundary maps back to the calibrated radius?
def test_connected_regions(contra):
    test = generate('mixture', 3, 99)
    for x in test.x:
        boundary = contra.boundary(x, 256, 5)
        z, _ = flow_inverse(boundary.points, x, contra.model)
        lower, upper = bounding_box(boundary.points, 0.1)
        mask = region_raster(contra.model, contra.ball, x, lower, upper, 300)

        assert np.all(np.abs(np.linalg.norm(z, axis=1) - contra.threshold) < 1e-6)
        assert count_components(mask) == 1

# * Given Gaussian outputs independent of x, does a trained flow calibrate to
#   the chi quantile?
def test_gaussian_radius():
    noise = noise_dataset(4000, 6)
    x, y = noise.x, noise.y
    model = train_flow(x[:3000], y[:3000], FlowConfig(layers=4, hidden=(32, 32), epochs=50), 6)

    ball = conformal_radius(calibrate(model, x[3000:], y[3000:]), 0.1)

    assert abs(ball.radius - 2.1460) < 0.05 * 2.1460
