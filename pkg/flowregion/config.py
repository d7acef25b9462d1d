# ## Run configuration
#
# A run is described by a YAML document with ``version: 1`` at its top. Every
# other key is optional and falls back to ``DEFAULTS``. Documents are checked
# against the defaults before anything runs: keys the defaults do not know are
# rejected, and so are values whose type differs from the default's. Errors
# name the dotted path of the offending key.

import copy

import yaml

VERSION = 1

# Raised for unreadable, unversioned or malformed configuration documents.
class ConfigError(Exception):
    pass

# Values that may be set freely, in place of a typed default.
class Free(object):
    def __init__(self, default=None):
        self.default = default

DEFAULTS = {
    'version': VERSION,
    'seed': 0,
    'alpha': 0.1,
    'output': 'out',
    'method': 'CONTRA',
    'methods': ['CONTRA', 'ResCONTRA', 'PCP', 'RCP', 'MCQR'],
    'data': {
        'generator': 'mixture',
        'n': 5000,
        'options': Free({}),
        'path': Free(None),
        'p': 2,
        'q': 2,
        'header': False,
    },
    'split': {
        'train': 0.675,
        'calibration': 0.225,
        'test': 0.1,
        'inner': 0.6,
    },
    'flow': {
        'layers': 6,
        'hidden': [128, 128],
        'epochs': 200,
        'learning_rate': 1e-3,
        'batch_size': 256,
        'clamp': 5.0,
    },
    'quantile': {
        'hidden': [64, 64],
        'epochs': 200,
        'learning_rate': 1e-3,
        'batch_size': 256,
        'optimize_weights': True,
    },
    'predictor': {
        'bandwidth': 1.0,
        'ridge': 1e-3,
    },
    'pcp': {
        'k': 40,
    },
    'volume': {
        'samples': 2000,
        'test_points': 100,
    },
    'boundary': {
        'points': 256,
        'levels': [0.5, 0.3, 0.1],
        'scatter': 0,
    },
    'diagnostics': {
        'factor': 1.25,
    },
    'eval': {
        'replications': 20,
        'workers': 1,
    },
}

# A mapping of settings that looks through to a parent mapping for names it
# does not hold, so a user document can sit on top of the defaults. Dotted
# names reach into nested sections.
class Settings(dict):
    def __init__(self, bindings=(), parent=None, path=''):
        self.parent = parent
        self.path = path
        for name, value in dict(bindings).items():
            self.define(name, value)

    # Looks up a dotted name here, then in the parent chain. The innermost
    # binding wins.
    def find(self, name):
        head, _, rest = name.partition('.')
        if head in self:
            value = self[head]
            if not rest:
                return value
            if isinstance(value, Settings):
                return value.find(rest)
        if self.parent is not None:
            return self.parent.find(name)
        raise ConfigError(f'Setting {self.path}{name} is not defined')

    def define(self, name, value):
        if isinstance(value, dict) and not isinstance(value, Settings):
            parent = self.parent.get(name) if self.parent is not None else None
            value = Settings(
                value,
                parent if isinstance(parent, Settings) else None,
                f'{self.path}{name}.',
            )
        self[name] = value

    # The effective contents of a section as a plain dict, defaults included.
    def section(self, name):
        merged = {}
        chain = []
        settings = self
        while settings is not None:
            chain.append(settings)
            settings = settings.parent
        for settings in reversed(chain):
            value = settings.get(name)
            if isinstance(value, dict):
                merged.update(_plain(value))
        return merged

def _plain(value):
    if isinstance(value, Free):
        return copy.deepcopy(value.default)
    if isinstance(value, dict):
        return {name: _plain(item) for name, item in value.items()}
    return value

def defaults():
    return Settings(_plain(DEFAULTS), path='')

def _type_name(value):
    if isinstance(value, bool):
        return 'boolean'
    if isinstance(value, (int, float)):
        return 'number'
    return {str: 'string', list: 'list', dict: 'mapping'}.get(type(value), type(value).__name__)

# Checks one value against its default and returns it normalized. YAML reads
# exponent literals without a dot (``1e-3``) as strings, so numeric strings are
# accepted where a float is expected.
def _check_value(path, value, default):
    if isinstance(default, Free):
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f'{path} must be a mapping, got {_type_name(value)}')
        checked = {}
        for name, item in value.items():
            if name not in default:
                known = ', '.join(sorted(default))
                raise ConfigError(f'Unknown key {path}.{name}; known keys: {known}')
            checked[name] = _check_value(f'{path}.{name}', item, default[name])
        return checked
    if isinstance(default, float) and isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            pass
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(
            _type_name(item) == _type_name(default[0]) for item in value)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(
            f'{path} must be a {_type_name(default)}, got {_type_name(value)} {value!r}')
    return value

def validate(document):
    if not isinstance(document, dict):
        raise ConfigError('A configuration document must be a mapping')
    if 'version' not in document:
        raise ConfigError(f'Configuration has no version; add "version: {VERSION}"')
    if document['version'] != VERSION:
        raise ConfigError(f'Unsupported configuration version {document["version"]!r}')
    checked = {}
    for name, value in document.items():
        if name not in DEFAULTS:
            raise ConfigError(f'Unknown key {name}; known keys: {", ".join(sorted(DEFAULTS))}')
        checked[name] = _check_value(name, value, DEFAULTS[name])
    alpha = checked.get('alpha', DEFAULTS['alpha'])
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f'alpha must lie in (0, 1), got {alpha}')
    return checked

def from_document(document):
    return Settings(validate(document), parent=defaults())

def load(path):
    try:
        with open(path) as file:
            document = yaml.safe_load(file)
    except yaml.YAMLError as e:
        raise ConfigError(f'{path}: not a YAML document: {e}') from e
    try:
        return from_document(document)
    except ConfigError as e:
        raise ConfigError(f'{path}: {e}') from e

def dump(settings, path):
    document = {name: settings.section(name) if isinstance(DEFAULTS[name], dict)
                else settings.find(name) for name in DEFAULTS}
    with open(path, 'w') as file:
        yaml.safe_dump(document, file, sort_keys=False)
