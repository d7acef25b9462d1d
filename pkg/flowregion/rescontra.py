# ## Residual flow regions
#
# A point predictor f is fitted on a first part of the data. A flow is trained
# on the residuals ``y - f(x)`` of a second part, still conditioned on x, and
# its latent ball is calibrated on the residuals of a third part. The region at
# x is ``f(x) + t(E, x)``: the residual region shifted by the prediction.
#
# Translation does not change volume, so the region's volume is the residual
# region's volume.

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngs
from .conformal import (
    LatentCalibration, ball_from_document, ball_to_document, calibrate, conformal_radius,
    latent_diagnostics, region_boundary, region_contains, region_volume,
)
from .data import subdivide
from .flow import FlowConfig, flow_from_document, flow_inverse, flow_to_document, train_flow
from .flow import sample as flow_sample
from .predictors import KernelRidge, predictor_from_document
from .registry import region_method

log = logging.getLogger(__name__)

# Raised when the parts handed to the residual method share records.
class SplitError(Exception):
    pass

@dataclass
class ResContraBundle:
    predictor: object
    model: object
    ball: object
    calibration: object = None
    rows: dict = field(default_factory=dict)
    provenance: str = ''

    @property
    def threshold(self):
        return self.ball.radius

    @property
    def alpha(self):
        return self.ball.alpha

    # The same bundle calibrated at another level, from the kept latents.
    def at_level(self, alpha):
        if self.calibration is None:
            raise SplitError('The bundle has not been calibrated')
        return replace(self, ball=conformal_radius(self.calibration, alpha))

    def residuals(self, x, y):
        return np.asarray(y, dtype=np.float64) - self.predictor.predict(x)

    def scores(self, x, y):
        z, _ = flow_inverse(self.residuals(x, y), x, self.model)
        return np.linalg.norm(np.atleast_2d(z), axis=1)

    def contains(self, x, y):
        return rescontra_contains(self, x, y)

    def boundary(self, x, m_points=256, seed=0):
        return rescontra_boundary(self, x, m_points, seed)

    def volume(self, x, samples=10000, seed=0):
        return rescontra_volume(self, x, samples, seed)

    def sample(self, x, n, seed=0):
        x = np.asarray(x, dtype=np.float64)
        return flow_sample(self.model, x, n, seed) + self.predictor.predict(x)

    def diagnostics(self, factor=1.25):
        return latent_diagnostics(self.calibration, factor)

# Parts drawn from the same source must not share record numbers. Parts from
# different sources are independent by construction.
def check_disjoint(*parts):
    for i, first in enumerate(parts):
        for second in parts[i + 1:]:
            if first.provenance != second.provenance:
                continue
            shared = np.intersect1d(first.rows, second.rows)
            if shared.size:
                raise SplitError(
                    f'{shared.size} records appear in two parts, first is record {shared[0]}')

# Fits the point predictor on d1 and the residual flow on d2. The bundle has
# no ball until ``rescontra_calibrate``.
def rescontra_train(d1, d2, flow_config=FlowConfig(), predictor=None, seed=0):
    for name, part in (('predictor', d1), ('residual flow', d2)):
        if len(part) == 0:
            raise SplitError(f'The {name} part is empty')
    check_disjoint(d1, d2)
    if predictor is None:
        predictor = KernelRidge()
    predictor.fit(d1.x, d1.y)
    log.info('Point predictor fitted on %d records', len(d1))
    residuals = d2.y - predictor.predict(d2.x)
    model = train_flow(d2.x, residuals, flow_config, seed)
    rows = {'predictor': d1.rows, 'flow': d2.rows}
    return ResContraBundle(predictor, model, None, None, rows, d1.provenance)

def rescontra_calibrate(bundle, d3, alpha):
    if len(d3) == 0:
        raise SplitError('The calibration part is empty')
    if bundle.provenance == d3.provenance:
        for name, rows in bundle.rows.items():
            shared = np.intersect1d(rows, d3.rows)
            if shared.size:
                raise SplitError(
                    f'{shared.size} calibration records were used for the {name}, '
                    f'first is record {shared[0]}')
    calibration = calibrate(bundle.model, d3.x, d3.y - bundle.predictor.predict(d3.x))
    ball = conformal_radius(calibration, alpha)
    log.info('Residual radius %.4f from %d calibration records', ball.radius, len(d3))
    rows = dict(bundle.rows, calibration=d3.rows)
    return replace(bundle, ball=ball, calibration=calibration, rows=rows)

def rescontra_fit(d1, d2, d3, alpha, flow_config=FlowConfig(), predictor=None, seed=0):
    check_disjoint(d1, d2, d3)
    bundle = rescontra_train(d1, d2, flow_config, predictor, seed)
    return rescontra_calibrate(bundle, d3, alpha)

def rescontra_contains(bundle, x, y):
    return region_contains(bundle.model, bundle.ball, x, bundle.residuals(x, y))

def rescontra_boundary(bundle, x, m_points=256, seed=0):
    boundary = region_boundary(bundle.model, bundle.ball, x, m_points, seed)
    boundary.points = boundary.points + bundle.predictor.predict(np.asarray(x, dtype=np.float64))
    return boundary

def rescontra_volume(bundle, x, samples=10000, seed=0):
    return region_volume(bundle.model, bundle.ball, x, samples, seed)

# The training part is divided between the predictor (``inner`` of it) and the
# residual flow.
def train_rescontra(train, alpha, options, seed):
    options = dict(options)
    inner = options.pop('inner', 0.6)
    predictor = KernelRidge(options.pop('bandwidth', 1.0), options.pop('ridge', 1e-3))
    config = FlowConfig.from_document(options)
    first, second = subdivide(np.arange(len(train)), inner, rngs.derive(seed, 'inner'))
    return rescontra_train(train.subset(first), train.subset(second), config, predictor, seed)

def bundle_to_document(bundle):
    return {
        'kind': 'rescontra',
        'version': 1,
        'predictor': bundle.predictor.to_document(),
        'flow': flow_to_document(bundle.model),
        'ball': None if bundle.ball is None else ball_to_document(bundle.ball),
        'latents': None if bundle.calibration is None else bundle.calibration.latents.tolist(),
        'rows': {name: rows.tolist() for name, rows in bundle.rows.items()},
        'provenance': bundle.provenance,
    }

def bundle_from_document(document):
    model = flow_from_document(document['flow'])
    calibration = None
    if document.get('latents') is not None:
        latents = np.asarray(document['latents'], dtype=np.float64).reshape(-1, model.q)
        calibration = LatentCalibration(latents, np.sort(np.linalg.norm(latents, axis=1)))
    ball = document.get('ball')
    return ResContraBundle(
        predictor_from_document(document['predictor']),
        model,
        None if ball is None else ball_from_document(ball),
        calibration,
        {name: np.asarray(rows, dtype=np.int64) for name, rows in document.get('rows', {}).items()},
        document.get('provenance', ''),
    )

@region_method(
    'ResCONTRA',
    train=train_rescontra,
    save_model=bundle_to_document,
    load_model=bundle_from_document,
    save_fitted=bundle_to_document,
    load_fitted=bundle_from_document,
)
def calibrate_rescontra(bundle, calibration, alpha, options, seed):
    return rescontra_calibrate(bundle, calibration, alpha)
