# ## Point predictors
#
# The residual method and the ellipsoid baseline both centre their regions on
# a point prediction of y. Any object with ``fit(x, y)`` and ``predict(x)``
# serves; ``KernelRidge`` is the built-in one.

import abc
import logging
import warnings

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .data import Scaler

log = logging.getLogger(__name__)

class PointPredictor(abc.ABC):
    # Fits on x: real[n, p], y: real[n, q] and returns self.
    @abc.abstractmethod
    def fit(self, x, y):
        pass

    # real[p] -> real[q], or real[m, p] -> real[m, q].
    @abc.abstractmethod
    def predict(self, x):
        pass

def gaussian_kernel(a, b, bandwidth):
    return np.exp(-cdist(a, b, 'sqeuclidean') / (2.0 * bandwidth**2))

# Kernel ridge regression with a Gaussian kernel and an explicit intercept.
# x is standardized internally; each output column is fitted to its
# mean-centred targets with the shared system (K + ridge I) A = Y - mean(Y).
# A singular or ill-conditioned system raises the ridge tenfold until it solves.
class KernelRidge(PointPredictor):
    def __init__(self, bandwidth=1.0, ridge=1e-3, max_escalations=12):
        if not bandwidth > 0.0:
            raise ValueError(f'Bandwidth must be positive, got {bandwidth}')
        if not ridge > 0.0:
            raise ValueError(f'Ridge penalty must be positive, got {ridge}')
        self.bandwidth = bandwidth
        self.ridge = ridge
        self.max_escalations = max_escalations
        self.scaler = None
        self.support = None
        self.dual = None
        self.intercept = None

    def __repr__(self):
        return f'KernelRidge(bandwidth={self.bandwidth}, ridge={self.ridge})'

    def fit(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if y.ndim == 1:
            y = y.reshape(-1, 1)
        if x.shape[0] == 0:
            raise ValueError('Cannot fit a point predictor on an empty set')
        if x.shape[0] != y.shape[0]:
            raise ValueError(f'x has {x.shape[0]} rows, y has {y.shape[0]}')

        self.scaler = Scaler.fit(x, strict=False)
        support = self.scaler.transform(x)
        kernel = gaussian_kernel(support, support, self.bandwidth)
        intercept = y.mean(axis=0)
        targets = y - intercept

        ridge = self.ridge
        for _ in range(self.max_escalations + 1):
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter('error', linalg.LinAlgWarning)
                    dual = linalg.solve(
                        kernel + ridge * np.eye(len(kernel)), targets, assume_a='pos')
                if np.all(np.isfinite(dual)):
                    break
            except (linalg.LinAlgError, linalg.LinAlgWarning):
                pass
            log.warning('Kernel system is singular at ridge %g, retrying at %g', ridge, ridge * 10)
            ridge *= 10.0
        else:
            raise linalg.LinAlgError(f'Kernel system stayed singular up to ridge {ridge}')

        self.ridge = ridge
        self.support = support
        self.dual = dual
        self.intercept = intercept
        return self

    def predict(self, x):
        if self.dual is None:
            raise ValueError('Point predictor used before fit')
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        batch = x.reshape(1, -1) if single else x
        kernel = gaussian_kernel(self.scaler.transform(batch), self.support, self.bandwidth)
        prediction = kernel @ self.dual + self.intercept
        return prediction[0] if single else prediction

    def to_document(self):
        return {
            'kind': 'kernel_ridge',
            'bandwidth': self.bandwidth,
            'ridge': self.ridge,
            'scaler': self.scaler.to_document(),
            'support': self.support.tolist(),
            'dual': self.dual.tolist(),
            'intercept': self.intercept.tolist(),
        }

    @classmethod
    def from_document(cls, document):
        predictor = cls(document['bandwidth'], document['ridge'])
        predictor.scaler = Scaler.from_document(document['scaler'])
        predictor.support = np.asarray(document['support'], dtype=np.float64)
        predictor.dual = np.asarray(document['dual'], dtype=np.float64)
        predictor.intercept = np.asarray(document['intercept'], dtype=np.float64)
        return predictor

# A predictor that always returns zero; the residual method built on it is
# plain flow-based regions.
class ZeroPredictor(PointPredictor):
    def __init__(self, q=None):
        self.q = q

    def fit(self, x, y):
        self.q = np.asarray(y).reshape(len(y), -1).shape[1]
        return self

    def predict(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return np.zeros(self.q)
        return np.zeros((x.shape[0], self.q))

    def to_document(self):
        return {'kind': 'zero', 'q': self.q}

    @classmethod
    def from_document(cls, document):
        return cls(document['q'])

PREDICTORS = {
    'kernel_ridge': KernelRidge,
    'zero': ZeroPredictor,
}

def predictor_from_document(document):
    try:
        kind = PREDICTORS[document['kind']]
    except KeyError:
        raise ValueError(f'Unknown point predictor {document.get("kind")!r}') from None
    return kind.from_document(document)

def make_predictor(kind='kernel_ridge', **options):
    try:
        return PREDICTORS[kind](**options)
    except KeyError:
        raise ValueError(f'Unknown point predictor {kind!r}; known: {", ".join(PREDICTORS)}') from None

# A predictor of the named kind fitted on (x, y).
def fit_point_predictor(x, y, kind='kernel_ridge', **options):
    return make_predictor(kind, **options).fit(x, y)
