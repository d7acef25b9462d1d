# ## Datasets
#
# Paired (x, y) records, the four synthetic error-structure generators used to
# benchmark the region methods (plus one with an intricate mean function), CSV
# ingestion and export, leakage-free standardization and reproducible splits.
#
# Every generator draws x from N(mu, I) and adds a structured error term to a
# polynomial mean. The mixture generator's second component has covariance
# 1.5 (I - J), used as given. That matrix is indefinite (eigenvalues +1.5 and
# -1.5), so it is sampled through the symmetric square root of its positive
# part: a degenerate Gaussian on the line spanned by (1, -1).

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngs

log = logging.getLogger(__name__)

# Raised for malformed input data, bad split specifications and degenerate
# columns.
class DataError(Exception):
    pass

@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    provenance: str = ''
    rows: np.ndarray = None

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim == 1:
            self.y = self.y.reshape(-1, 1)
        if self.x.shape[0] != self.y.shape[0]:
            raise DataError(f'x has {self.x.shape[0]} rows, y has {self.y.shape[0]}')
        if self.rows is None:
            self.rows = np.arange(self.x.shape[0])
        self.rows = np.asarray(self.rows, dtype=np.int64)

    def __len__(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def q(self):
        return self.y.shape[1]

    # The records at ``indices``. ``rows`` keeps pointing at the original
    # record numbers, so subsets of subsets stay traceable.
    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return replace(self, x=self.x[indices], y=self.y[indices], rows=self.rows[indices])

# ### Standardization

# Per-column affine statistics. ``transform`` maps to zero mean and unit
# spread, ``inverse`` maps back.
@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(-1)

    # With ``strict`` off, constant columns are centred but left unscaled.
    @classmethod
    def fit(cls, values, strict=True):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.shape[0] < (2 if strict else 1):
            raise DataError(f'Need at least 2 rows to standardize, got {values.shape[0]}')
        std = values.std(axis=0)
        for column, s in enumerate(std):
            if not s > 0.0 and strict:
                raise DataError(f'Column {column} has zero variance')
        return cls(values.mean(axis=0), np.where(std > 0.0, std, 1.0))

    @classmethod
    def identity(cls, width):
        return cls(np.zeros(width), np.ones(width))

    @property
    def width(self):
        return self.mean.shape[0]

    # log |det| of ``inverse``.
    @property
    def log_scale(self):
        return float(np.sum(np.log(self.std)))

    def transform(self, values):
        return (values - self.mean) / self.std

    def inverse(self, values):
        return values * self.std + self.mean

    def to_document(self):
        return {'mean': self.mean.tolist(), 'std': self.std.tolist()}

    @classmethod
    def from_document(cls, document):
        return cls(document['mean'], document['std'])

@dataclass
class Standardization:
    x: Scaler
    y: Scaler = None

# Standardizes a dataset with statistics computed only from the rows at
# ``fit_on``, applied to every row. y is left alone unless ``with_y``.
def standardize(dataset, fit_on, with_y=False):
    fit_on = np.asarray(fit_on, dtype=np.int64)
    stats = Standardization(Scaler.fit(dataset.x[fit_on]))
    y = dataset.y
    if with_y:
        stats.y = Scaler.fit(dataset.y[fit_on])
        y = stats.y.transform(y)
    return replace(dataset, x=stats.x.transform(dataset.x), y=y), stats

def unstandardize(dataset, stats):
    y = dataset.y if stats.y is None else stats.y.inverse(dataset.y)
    return replace(dataset, x=stats.x.inverse(dataset.x), y=y)

# ### Synthetic generators

DEFAULT_X_MEAN = (-2.0, -1.5)

def sample_x(rng, n, mean=DEFAULT_X_MEAN):
    mean = np.asarray(mean, dtype=np.float64)
    return rng.standard_normal((n, mean.shape[0])) + mean

# Mean function of the mixture-error model.
def mixture_mean(x):
    x1, x2 = x[:, 0], x[:, 1]
    y1 = 3 * x1**3 * x2 - 5 * x2**2 + 4 * x1 * x2 - 6 * x2 + 7
    y2 = x1 * x2 - x2**3 + 3 * x1 * x2**2 + 8
    return np.column_stack([y1, y2])

# Mean function shared by the spiral, moon and ring models.
def curve_mean(x):
    x1, x2 = x[:, 0], x[:, 1]
    y1 = 2 * x1**3 - 3 * x2**2 + 5 * x2 + x1 * x2
    y2 = x1**2 * x2 - 4 * x2**2 + 3 * x1**2 * x2 + 7
    return np.column_stack([y1, y2])

MIXTURE_WEIGHTS = np.array([0.3, 0.4, 0.3])
MIXTURE_MEANS = np.array([[0.0, 0.0], [5.0, 5.0], [10.0, 0.0]])
_I2 = np.eye(2)
_J2 = np.ones((2, 2))
MIXTURE_COVARIANCES = np.array([0.5 * (_I2 + _J2), 1.5 * (_I2 - _J2), _I2])

# Symmetric square root of the positive semi-definite part of ``matrix``.
def psd_sqrt(matrix):
    values, vectors = np.linalg.eigh(matrix)
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T

def mixture_noise(rng, n):
    component = rng.choice(len(MIXTURE_WEIGHTS), size=n, p=MIXTURE_WEIGHTS)
    roots = np.array([psd_sqrt(c) for c in MIXTURE_COVARIANCES])
    z = rng.standard_normal((n, 2))
    return MIXTURE_MEANS[component] + np.einsum('nij,nj->ni', roots[component], z)

def spiral_noise(rng, n, sd=(0.2, 0.1)):
    theta = rng.uniform(0.0, 2 * math.pi, size=n)
    z = rng.standard_normal((n, 2))
    return np.column_stack([
        theta * np.cos(theta) + sd[0] * z[:, 0],
        theta * np.sin(theta) + sd[1] * z[:, 1],
    ])

def moon_noise(rng, n, sd=0.1):
    theta = rng.uniform(0.0, math.pi, size=n)
    z = rng.standard_normal((n, 2))
    return np.column_stack([np.cos(theta) + sd * z[:, 0], np.sin(theta) + sd * z[:, 1]])

def ring_noise(rng, n, inner=5.0, outer=10.0):
    if not 0.0 <= inner < outer:
        raise DataError(f'Ring needs 0 <= inner < outer, got inner={inner}, outer={outer}')
    r = np.sqrt(rng.uniform(inner**2, outer**2, size=n))
    theta = rng.uniform(0.0, 2 * math.pi, size=n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])

def _check_size(n):
    if n < 1:
        raise DataError(f'Cannot generate {n} records')

def gen_mixture(n, seed):
    _check_size(n)
    rng = rngs.generator(seed, 'mixture')
    x = sample_x(rng, n)
    y = mixture_mean(x) + mixture_noise(rng, n)
    return Dataset(x, y, f'mixture(n={n}, seed={seed})')

def gen_spiral(n, seed, sd=(0.2, 0.1)):
    _check_size(n)
    rng = rngs.generator(seed, 'spiral')
    x = sample_x(rng, n)
    y = curve_mean(x) + spiral_noise(rng, n, sd)
    return Dataset(x, y, f'spiral(n={n}, seed={seed})')

def gen_moon(n, seed, sd=0.1):
    _check_size(n)
    rng = rngs.generator(seed, 'moon')
    x = sample_x(rng, n)
    y = curve_mean(x) + moon_noise(rng, n, sd)
    return Dataset(x, y, f'moon(n={n}, seed={seed})')

def gen_ring(n, seed, r_inner=5.0, r_outer=10.0):
    _check_size(n)
    rng = rngs.generator(seed, 'ring')
    x = sample_x(rng, n)
    y = curve_mean(x) + ring_noise(rng, n, r_inner, r_outer)
    return Dataset(x, y, f'ring(n={n}, seed={seed}, inner={r_inner}, outer={r_outer})')

# A ten-input model whose mean is hard to learn but whose noise is simple.
# e1 and e2 are the two coordinates of the N(0, I) error term.
def gen_complex(n, seed):
    _check_size(n)
    rng = rngs.generator(seed, 'complex')
    mu = rng.uniform(-10.0, 10.0, size=10)
    x = rng.standard_normal((n, 10)) + mu
    e = rng.standard_normal((n, 2))
    X = [None] + [x[:, j] for j in range(10)]
    e1, e2 = e[:, 0], e[:, 1]
    y1 = (2 * X[1]**2 * e1 * e2 - 3 * X[2] + 0.5 * X[3]**3 + X[4] * X[5] * e2
          - 1.5 * X[6]**2 + 0.7 * X[7] * X[8]**2 - 0.3 * X[9] * e1
          + np.sin(X[10]) + 5)
    y2 = (-X[1]**3 + 4 * X[2]**2 - X[3] * X[4] * e2 + 0.8 * X[5]**2
          - 2 * X[6] * X[7] * e1 * e2 + 0.6 * X[8] - 1.2 * X[9]**3 * e1**2
          + np.cos(X[10]) + 7)
    return Dataset(x, np.column_stack([y1, y2]), f'complex(n={n}, seed={seed})')

GENERATORS = {
    'mixture': gen_mixture,
    'spiral': gen_spiral,
    'moon': gen_moon,
    'ring': gen_ring,
    'complex': gen_complex,
}

def generate(name, n, seed, **options):
    try:
        generator = GENERATORS[name]
    except KeyError:
        raise DataError(f'Unknown generator {name!r}; known: {", ".join(GENERATORS)}') from None
    return generator(n, seed, **options)

# ### CSV

def load_csv(path, p, q, header=False):
    width = p + q
    if p < 1 or q < 1:
        raise DataError(f'Need p >= 1 and q >= 1, got p={p}, q={q}')
    records = []
    with open(path, newline='') as file:
        reader = csv.reader(file)
        for line, row in enumerate(reader, start=1):
            if header and line == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != width:
                raise DataError(
                    f'{path}:{line}: expected {width} columns (p={p}, q={q}), found {len(row)}')
            try:
                records.append([float(cell) for cell in row])
            except ValueError:
                column = next(c for c, cell in enumerate(row) if not _numeric(cell))
                raise DataError(
                    f'{path}:{line}: column {column} is not numeric: {row[column]!r}') from None
    if not records:
        raise DataError(f'{path}: no records')
    values = np.array(records)
    if not np.all(np.isfinite(values)):
        raise DataError(f'{path}: non-finite values')
    return Dataset(values[:, :p], values[:, p:], f'csv({path})')

def _numeric(cell):
    try:
        float(cell)
        return True
    except ValueError:
        return False

def save_csv(dataset, path):
    names = [f'x{j + 1}' for j in range(dataset.p)] + [f'y{j + 1}' for j in range(dataset.q)]
    with open(path, 'w', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(names)
        for row in np.hstack([dataset.x, dataset.y]):
            writer.writerow([repr(float(v)) for v in row])

# ### Splits

# Sizes of the train, calibration and test parts, either as counts that add up
# to the dataset size or as fractions that add up to 1. ``inner`` is the share
# of the training part given to a second-level model (the point predictor in
# the residual method).
@dataclass(frozen=True)
class SplitSpec:
    train: float
    calibration: float
    test: float = 0
    inner: float = 0.6

    def counts(self, n):
        parts = (self.train, self.calibration, self.test)
        if any(part < 0 for part in parts):
            raise DataError(f'Negative split part in {parts}')
        if all(float(part).is_integer() and part >= 1 or part == 0 for part in parts) \
                and sum(parts) > 1:
            counts = tuple(int(part) for part in parts)
            if sum(counts) != n:
                raise DataError(f'Split sizes {counts} do not add up to {n} records')
            return counts
        if not math.isclose(sum(parts), 1.0):
            raise DataError(f'Split fractions {parts} do not add up to 1')
        train = int(math.floor(self.train * n))
        calibration = int(math.floor(self.calibration * n))
        return train, calibration, n - train - calibration

@dataclass(frozen=True)
class Split:
    train: np.ndarray
    calibration: np.ndarray
    test: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def check(self, n=None):
        parts = [self.train, self.calibration, self.test]
        seen = np.concatenate(parts)
        if len(np.unique(seen)) != len(seen):
            raise DataError('Split parts overlap')
        if n is not None and len(seen) != n:
            raise DataError(f'Split covers {len(seen)} of {n} records')
        return self

# Splits ``n`` records into disjoint, exhaustive train, calibration and test
# index sets. The test part is taken first, so it depends only on the seed and
# its size: resplitting the remainder (``resplit``) keeps the test set fixed.
def split(n, spec, seed):
    n_train, n_calibration, n_test = spec.counts(n)
    order = rngs.generator(seed, 'split').permutation(n)
    test = np.sort(order[:n_test])
    pool = order[n_test:]
    return Split(np.sort(pool[:n_train]), np.sort(pool[n_train:n_train + n_calibration]), test)

def resplit(pool, n_train, seed):
    pool = np.asarray(pool, dtype=np.int64)
    order = rngs.generator(seed, 'resplit').permutation(len(pool))
    return np.sort(pool[order[:n_train]]), np.sort(pool[order[n_train:]])

# Divides ``indices`` into a first part holding ``fraction`` of them and a
# second part holding the rest.
def subdivide(indices, fraction, seed):
    indices = np.asarray(indices, dtype=np.int64)
    if not 0.0 < fraction < 1.0:
        raise DataError(f'Subdivision fraction must lie in (0, 1), got {fraction}')
    cut = int(round(fraction * len(indices)))
    if cut < 1 or cut >= len(indices):
        raise DataError(f'Cannot divide {len(indices)} records at fraction {fraction}')
    order = rngs.generator(seed, 'subdivide').permutation(len(indices))
    return np.sort(indices[order[:cut]]), np.sort(indices[order[cut:]])
