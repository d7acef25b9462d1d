# ## Seeded randomness
#
# Every stochastic step in flowregion draws from a generator derived from one
# root seed and a path of names or integers, for example
# ``generator(seed, 'replication', 3, 'flow')``. Paths are hashed into the spawn
# key of a numpy ``SeedSequence``, and the bit generator is Philox, which is
# counter-based: two generators with different paths never share a stream, and
# the same path always reproduces the same stream.

import hashlib

import numpy as np

# Maps one path component to a non-negative integer spawn-key word. Integers
# are used as given; strings and bytes are hashed.
def path_key(part):
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f'Seed path component {part} is negative')
        return int(part)
    if isinstance(part, str):
        part = part.encode('utf-8')
    if isinstance(part, bytes):
        return int.from_bytes(hashlib.blake2b(part, digest_size=8).digest(), 'little')
    raise TypeError(f'Cannot derive a seed from {part!r}')

def sequence(seed, *path):
    return np.random.SeedSequence(
        entropy=path_key(seed),
        spawn_key=tuple(path_key(part) for part in path),
    )

# A reproducible generator for ``(seed, *path)``.
def generator(seed, *path):
    return np.random.Generator(np.random.Philox(sequence(seed, *path)))

# A reproducible 63-bit integer seed for ``(seed, *path)``. Use this where a
# seed has to be recorded in a report or passed to another component.
def derive(seed, *path):
    state = sequence(seed, *path).generate_state(1, dtype=np.uint64)
    return int(state[0] >> np.uint64(1))

# A stable digest of an array's contents, for seeding per-point draws.
def digest(values):
    values = np.ascontiguousarray(values, dtype=np.float64)
    return hashlib.blake2b(values.tobytes(), digest_size=8).digest()
