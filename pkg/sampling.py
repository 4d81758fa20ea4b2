'''
Random number contract for every experiment in this repository.

Generator: numpy's PCG64 bit generator, seeded through numpy.random.SeedSequence
with entropy = the 64-bit experiment seed and spawn_key = (stream,).
Training draws use TRAIN_STREAM, Monte Carlo evaluation uses EVAL_STREAM,
so the two never share a random sequence. Ground-truth parameters of a synthetic
problem come from PARAMETER_STREAM, shared by training and evaluation data.

Normals: drawn with the Box-Muller transform from pairs of doubles returned by
Generator.random(), which are produced from the PCG64 output by a fixed
bit-level recipe. Given (PCG64, seed, stream) the draws are identical on every
platform.
'''
import numpy as np

from errors import InputError

TRAIN_STREAM = 0
EVAL_STREAM = 1
BASELINE_STREAM = 2
PARAMETER_STREAM = 3

_U64_MAX = 2**64 - 1


def check_seed(seed):
    '''
    Seeds are unsigned 64-bit integers.
    '''
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise InputError(f"seed must be an integer, got {seed!r}")
    if not 0 <= int(seed) <= _U64_MAX:
        raise InputError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return int(seed)


def make_rng(seed, stream=TRAIN_STREAM):
    seed = check_seed(seed)
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(seq))


def standard_normal(rng, size):
    '''
    Box-Muller: z0 = sqrt(-2 ln u1) cos(2 pi u2), z1 = sqrt(-2 ln u1) sin(2 pi u2).
    u1 is taken as 1 - Generator.random() so it lies in (0, 1] and the log is finite.
    Returns an array of shape size (int or tuple).
    '''
    shape = (size,) if np.isscalar(size) else tuple(size)
    count = int(np.prod(shape, dtype=np.int64))
    pairs = (count + 1) // 2
    u = rng.random((pairs, 2))
    u1 = 1.0 - u[:, 0]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u[:, 1]
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:count].reshape(shape)


def seed_provenance(seed):
    '''
    What report.json records about the seed streams.
    '''
    seed = check_seed(seed)
    return {
        "generator": "numpy.random.PCG64",
        "normal_transform": "box-muller",
        "seed": seed,
        "streams": {
            "train": TRAIN_STREAM, "eval": EVAL_STREAM,
            "baseline": BASELINE_STREAM, "parameter": PARAMETER_STREAM,
        },
    }
