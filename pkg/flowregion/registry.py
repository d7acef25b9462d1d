# ## Method registry
#
# Region methods register themselves under a display name. The evaluation
# harness and the command line look methods up by that name, so a new method
# only has to register itself to take part in experiments.
#
# A method runs in two stages, which the command line also runs separately:
#
# * ``train(train, alpha, options, seed)`` fits whatever the method learns
#   from the proper training part and returns a model,
# * ``calibrate(model, calibration, alpha, options, seed)`` calibrates the
#   model and returns a fitted region object.
#
# ``options`` is a dict of method-specific settings and ``seed`` an integer;
# both stages get the same ones. The fitted object offers:
#
# * ``scores(x, y)``: nonconformity scores of paired rows,
# * ``threshold``: the calibrated score threshold,
# * ``contains(x, y)``: membership of paired rows, a boolean array,
# * ``volume(x, samples, seed)``: a ``VolumeEstimate`` of the region at one x.
#
# Methods register with the ``region_method`` decorator on their calibrate
# function. Models and fitted objects are saved to and loaded from plain
# documents with the four ``save_``/``load_`` functions.

from dataclasses import dataclass

# Raised when a name is registered twice, or looked up and not found.
class RegistryError(Exception):
    pass

@dataclass(frozen=True)
class Method:
    name: str
    train: object
    calibrate: object
    save_model: object
    load_model: object
    save_fitted: object
    load_fitted: object

    def fit(self, train, calibration, alpha, options, seed):
        model = self.train(train, alpha, options, seed)
        return self.calibrate(model, calibration, alpha, options, seed)

class Registry(object):
    def __init__(self, kind='method'):
        self.kind = kind
        self.bindings = {}

    def bind(self, name, value):
        if name in self.bindings:
            raise RegistryError(f'{self.kind.capitalize()} {name} is already registered')
        self.bindings[name] = value
        return value

    def find(self, name):
        if name in self.bindings:
            return self.bindings[name]
        known = ', '.join(sorted(self.bindings)) or 'none'
        raise RegistryError(f'Unknown {self.kind} {name}; known: {known}')

    def names(self):
        return list(self.bindings)

    def __contains__(self, name):
        return name in self.bindings

methods = Registry('method')

# Binds a method at import. The decorated function is the calibrate stage and
# comes back unchanged; the other stages are keywords.
def region_method(name, registry=None, **stages):
    registry = methods if registry is None else registry

    def register(calibrate):
        registry.bind(name, Method(name, calibrate=calibrate, **stages))
        return calibrate
    return register
