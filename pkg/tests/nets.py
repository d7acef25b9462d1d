from hypothesis.strategies import composite, floats, integers

from flowregion import rng as rngs
from flowregion.autodiff import init_net
from flowregion.data import Dataset
from flowregion.flow import FlowConfig, init_flow

# Generators for networks, flows and the arrays fed to them. Every generator
# draws a seed and builds its values from a seeded numpy generator, so a
# failing example is reproduced exactly from hypothesis's report.

# Generates root seeds.
def seeds():
    return integers(min_value=0, max_value=2**32 - 1)

# Generates small layer widths.
def widths(max_width=4):
    return integers(min_value=1, max_value=max_width)

# Generates dense networks of up to ``max_depth`` layers, initialized the way
# training initializes them.
@composite
def nets(draw, max_depth=3, max_width=8):
    depth = draw(integers(min_value=1, max_value=max_depth))
    sizes = [draw(widths(max_width)) for _ in range(depth + 1)]
    return init_net(sizes, rngs.generator(draw(seeds()), 'net'))

# Generates flows whose conditioners have all been moved away from zero, so no
# layer is the identity. ``spread`` bounds the size of the perturbation.
@composite
def flows(draw, min_q=1, max_q=3, max_p=2, max_layers=4, spread=0.5):
    p = draw(integers(min_value=1, max_value=max_p))
    q = draw(integers(min_value=min_q, max_value=max_q))
    config = FlowConfig(
        layers=draw(integers(min_value=1, max_value=max_layers)),
        hidden=(draw(integers(min_value=2, max_value=6)),),
    )
    seed = draw(seeds())
    return perturbed(init_flow(p, q, config, seed), seed, draw(floats(0.05, spread)))

# Moves every parameter of ``model`` by seeded Gaussian noise of size
# ``scale``, in place.
def perturbed(model, seed, scale):
    rng = rngs.generator(seed, 'perturb')
    for parameter in model.parameters():
        parameter += scale * rng.standard_normal(parameter.shape)
    return model

# Standard Gaussian rows for a model: (z, x) with n rows each.
def gaussian_rows(model, n, seed):
    rng = rngs.generator(seed, 'rows')
    return rng.standard_normal((n, model.q)), rng.standard_normal((n, model.p))

# Pairs whose y is standard Gaussian noise independent of x.
def noise_dataset(n, seed, p=2, q=2):
    rng = rngs.generator(seed, 'noise dataset')
    return Dataset(rng.standard_normal((n, p)), rng.standard_normal((n, q)), f'noise({seed})')
