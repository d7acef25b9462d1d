from . import baselines, conformal, config, data, evaluation, export, mcqr, rescontra
from . import rng as rngs
from .registry import methods

# A run described by one set of settings: the dataset they name, its split,
# and the methods trained and calibrated on it. Every seed is derived from the
# settings' root seed, so two sessions over the same settings agree exactly.
class Session(object):
    def __init__(self, settings=None):
        if settings is None:
            settings = config.defaults()
        self.settings = settings
        self._dataset = None

    @classmethod
    def load(cls, path):
        return cls(config.load(path))

    @property
    def seed(self):
        return self.settings.find('seed')

    @property
    def alpha(self):
        return self.settings.find('alpha')

    def dataset(self):
        if self._dataset is None:
            self._dataset = evaluation.dataset_from_settings(self.settings)
        return self._dataset

    # The train, calibration and test parts of the dataset.
    def parts(self):
        dataset = self.dataset()
        spec = evaluation.split_spec(self.settings)
        split = data.split(len(dataset), spec, self.seed).check(len(dataset))
        return (
            dataset.subset(split.train),
            dataset.subset(split.calibration),
            dataset.subset(split.test),
        )

    def method(self, name=None):
        return methods.find(name or self.settings.find('method'))

    def options(self, name=None):
        return evaluation.method_options(self.settings, self.method(name).name)

    def method_seed(self, name=None):
        return rngs.derive(self.seed, self.method(name).name)

    def train(self, name=None):
        method = self.method(name)
        train, _, _ = self.parts()
        return method.train(
            train, self.alpha, self.options(method.name), self.method_seed(method.name))

    def calibrate(self, model, name=None):
        method = self.method(name)
        _, calibration, _ = self.parts()
        return method.calibrate(
            model, calibration, self.alpha, self.options(method.name),
            self.method_seed(method.name))

    def fit(self, name=None):
        return self.calibrate(self.train(name), name)

    def diagnose(self, fitted, factor=None):
        if getattr(fitted, 'calibration', None) is None:
            raise conformal.CalibrationError(
                'Diagnostics need a flow calibrated on latents (CONTRA or ResCONTRA)')
        if factor is None:
            factor = self.settings.find('diagnostics.factor')
        return conformal.latent_diagnostics(fitted.calibration, factor)

    def evaluate(self):
        experiment = evaluation.ExperimentConfig.from_settings(self.settings)
        return evaluation.run_experiment(experiment, self.dataset())
