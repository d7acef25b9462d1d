# ## Experiment harness
#
# One dataset is split once into a fixed test set and a pool. Each
# replication reshuffles the pool into a proper training part and a
# calibration part, fits every method on the training part, calibrates it,
# and measures on the test set:
#
# * coverage: the fraction of test pairs whose y lies in the region at x,
# * volume: the mean region volume over the first test points.
#
# Replication seeds are derived from the root seed and the replication index,
# so replications are independent and any one of them can be rerun alone.
# Reports are assembled in replication order whatever order the replications
# finish in.

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import baselines, conformal, mcqr, rescontra  # noqa: F401 (method registration)
from . import rng as rngs
from .conformal import bounded, expected_coverage, order_statistic_rank
from .data import SplitSpec, generate, load_csv, resplit, split
from .registry import methods

log = logging.getLogger(__name__)

# Raised when a replication fails. ``report`` summarises the replications that
# completed before the failure.
class ExperimentError(Exception):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report

@dataclass
class ExperimentConfig:
    methods: list
    alpha: float = 0.1
    replications: int = 20
    seed: int = 0
    split: SplitSpec = SplitSpec(0.675, 0.225, 0.1)
    options: dict = field(default_factory=dict)
    volume_samples: int = 2000
    volume_points: int = 100
    workers: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError(f'Need at least one replication, got {self.replications}')
        conformal.check_alpha(self.alpha)
        for name in self.methods:
            methods.find(name)

    @classmethod
    def from_settings(cls, settings):
        names = settings.find('methods')
        return cls(
            methods=list(names),
            alpha=settings.find('alpha'),
            replications=settings.find('eval.replications'),
            seed=settings.find('seed'),
            split=split_spec(settings),
            options={name: method_options(settings, name) for name in names},
            volume_samples=settings.find('volume.samples'),
            volume_points=settings.find('volume.test_points'),
            workers=settings.find('eval.workers'),
        )

    def to_document(self):
        document = asdict(self)
        document['split'] = asdict(self.split)
        return document

def split_spec(settings):
    section = settings.section('split')
    return SplitSpec(section['train'], section['calibration'], section['test'], section['inner'])

# Options handed to a method's fitting function, drawn from the configuration
# sections that method uses.
def method_options(settings, name):
    if name in ('CONTRA', 'PCP', 'ResCONTRA'):
        options = settings.section('flow')
    else:
        options = {}
    if name == 'PCP':
        options.update(settings.section('pcp'))
    if name in ('ResCONTRA', 'RCP'):
        options.update(settings.section('predictor'))
        options['inner'] = settings.find('split.inner')
    if name == 'MCQR':
        options.update(settings.section('quantile'))
    return options

def dataset_from_settings(settings):
    data = settings.section('data')
    if data.get('path'):
        return load_csv(data['path'], data['p'], data['q'], data['header'])
    return generate(data['generator'], data['n'], settings.find('seed'), **data['options'])

@dataclass
class ReplicationRow:
    replication: int
    method: str
    seed: int
    coverage: float
    volume: float
    volume_stderr: float
    threshold: float
    runtime: float

@dataclass
class MethodSummary:
    method: str
    coverage_mean: float
    coverage_se: float
    volume_mean: float
    volume_se: float
    replications: int

@dataclass
class MetricsReport:
    rows: list
    summaries: list
    runtime: float
    config: dict = None

    @property
    def replications(self):
        return len({row.replication for row in self.rows})

    def summary(self, method):
        for summary in self.summaries:
            if summary.method == method:
                return summary
        raise KeyError(method)

    def to_document(self):
        return {
            'kind': 'report',
            'version': 1,
            'runtime': self.runtime,
            'config': self.config,
            'summaries': [asdict(summary) for summary in self.summaries],
            'rows': [asdict(row) for row in self.rows],
        }

def mean_se(values):
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    if len(values) < 2 or not np.all(np.isfinite(values)):
        return mean, 0.0
    return mean, float(values.std(ddof=1) / math.sqrt(len(values)))

# Per-method means and standard errors, in order of first appearance.
def summarize(rows):
    names = list(dict.fromkeys(row.method for row in rows))
    summaries = []
    for name in names:
        mine = [row for row in rows if row.method == name]
        coverage = mean_se([row.coverage for row in mine])
        volume = mean_se([row.volume for row in mine])
        summaries.append(MethodSummary(name, *coverage, *volume, len(mine)))
    return summaries

def region_volume_mean(fitted, x, samples, seed):
    if not bounded(fitted.threshold):
        return math.inf, 0.0
    estimates = [
        fitted.volume(row, samples, rngs.derive(seed, 'volume', index)).estimate
        for index, row in enumerate(x)
    ]
    return mean_se(estimates)

def run_replication(dataset, fixed, config, replication):
    seed = rngs.derive(config.seed, 'replication', replication)
    train_rows, calibration_rows = resplit(fixed.pool, fixed.n_train, seed)
    train, calibration = dataset.subset(train_rows), dataset.subset(calibration_rows)
    test = dataset.subset(fixed.test)
    rows = []
    for name in config.methods:
        started = time.perf_counter()
        method_seed = rngs.derive(seed, name)
        fitted = methods.find(name).fit(
            train, calibration, config.alpha, config.options.get(name, {}), method_seed)
        coverage = float(np.mean(fitted.contains(test.x, test.y)))
        volume, stderr = region_volume_mean(
            fitted, test.x[:config.volume_points], config.volume_samples, method_seed)
        runtime = time.perf_counter() - started
        log.info('Replication %d %s: coverage %.3f, volume %.4g (%.1fs)',
                 replication, name, coverage, volume, runtime)
        rows.append(ReplicationRow(
            replication, name, method_seed, coverage, volume, stderr,
            float(fitted.threshold), runtime))
    return rows

@dataclass
class FixedSplit:
    test: np.ndarray
    pool: np.ndarray
    n_train: int

def fix_split(n, spec, seed):
    parts = split(n, spec, seed)
    pool = np.sort(np.concatenate([parts.train, parts.calibration]))
    return FixedSplit(parts.test, pool, len(parts.train))

def _replicate(arguments):
    return run_replication(*arguments)

def run_experiment(config, dataset):
    started = time.perf_counter()
    fixed = fix_split(len(dataset), config.split, config.seed)
    if len(fixed.test) == 0:
        raise ValueError('The experiment needs a non-empty test set')
    log.info('Experiment: %d records, %d test, %d replications of %s',
             len(dataset), len(fixed.test), config.replications, ', '.join(config.methods))
    jobs = [(dataset, fixed, config, r) for r in range(config.replications)]
    results = {}
    try:
        if config.workers > 1:
            with ProcessPoolExecutor(config.workers) as pool:
                for r, rows in zip(range(config.replications), pool.map(_replicate, jobs)):
                    results[r] = rows
        else:
            for job in jobs:
                results[job[3]] = _replicate(job)
    except Exception as e:
        rows = [row for r in sorted(results) for row in results[r]]
        partial = MetricsReport(
            rows, summarize(rows) if rows else [], time.perf_counter() - started,
            config.to_document())
        raise ExperimentError(
            f'Replication {len(results)} failed: {e}', partial) from e
    rows = [row for r in sorted(results) for row in results[r]]
    return MetricsReport(rows, summarize(rows), time.perf_counter() - started, config.to_document())

# ### Coverage-bound trials

@dataclass
class TrialResult:
    mean: float
    stderr: float
    expected: float
    trials: int

    # Whether the mean lies within ``width`` standard errors of the exact
    # expected coverage, using the binomial standard error at that value.
    def agrees(self, width=3.0):
        se = math.sqrt(self.expected * (1.0 - self.expected) / self.trials)
        return abs(self.mean - self.expected) <= width * se + 1e-12

def gaussian_scores(count, seed):
    return rngs.generator(seed, 'scores').standard_normal(count)

# Runs ``trials`` independent calibrate-then-test trials on fresh scores from
# ``source(count, seed)``: n2 calibration scores set the threshold, and one
# more score is tested against it.
def coverage_bound_trial(n2, alpha, trials, seed, source=gaussian_scores):
    if n2 < 1 or trials < 1:
        raise ValueError(f'Need n2 >= 1 and trials >= 1, got n2={n2}, trials={trials}')
    scores = np.asarray(source(trials * (n2 + 1), seed), dtype=np.float64).reshape(trials, n2 + 1)
    calibration, test = scores[:, :n2], scores[:, n2]
    k = order_statistic_rank(n2, alpha)
    if k > n2:
        covered = np.ones(trials, dtype=bool)
    else:
        thresholds = np.partition(calibration, k - 1, axis=1)[:, k - 1]
        covered = test <= thresholds
    mean, stderr = mean_se(covered.astype(np.float64))
    return TrialResult(mean, stderr, expected_coverage(n2, alpha), trials)

# A score source drawing fresh pairs from a synthetic generator and scoring
# them with a fitted method, for trials on a method's own scores. Pairs are
# scored ``chunk`` at a time.
def pipeline_scores(fitted, generator, chunk=5000, **options):
    def source(count, seed):
        fresh = generate(generator, count, seed, **options)
        return np.concatenate([
            fitted.scores(fresh.x[start:start + chunk], fresh.y[start:start + chunk])
            for start in range(0, count, chunk)
        ])
    return source
