'''
Min-max robust regression benchmark:

    minimize S  subject to  |A_i x - b_i| <= S  for every retained scenario i

with scalar A_i, b_i drawn as A_i = 3 + 3 n1, b_i = A_i x* + 5 n2, n1, n2 ~ N(0, 1)
and the unknown true parameter x* ~ Uniform[2, 3].
'''
import logging
from dataclasses import dataclass

import numpy as np

from errors import InputError
from sampling import PARAMETER_STREAM, TRAIN_STREAM, check_seed, make_rng, standard_normal

logger = logging.getLogger(__name__)

ACTIVE_TOL = 1e-8
CANDIDATE_CHUNK = 4096


@dataclass(frozen=True)
class RegressionDataSpec:
    '''
    N: number of scenarios
    seed: experiment seed; x* is drawn from the parameter stream of this seed
    stream: which random stream the (A, b) pairs come from (training or evaluation)
    '''
    N: int = 200
    seed: int = 0
    stream: int = TRAIN_STREAM

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise InputError(f"N must be an integer >= 1, got {self.N}")
        check_seed(self.seed)


@dataclass
class RegressionScenarios:
    A: np.ndarray
    b: np.ndarray
    # ground truth, for reporting only
    x_star: float

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float).reshape(-1)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.A.shape != self.b.shape:
            raise InputError(f"A and b lengths differ: {self.A.shape[0]} vs {self.b.shape[0]}")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise InputError("A and b must be finite")

    @property
    def N(self):
        return int(self.A.shape[0])


@dataclass
class MinimaxSolution:
    x: float
    S: float
    active: np.ndarray
    degenerate: bool = False


def true_parameter(seed):
    '''
    x* ~ Uniform[2, 3], fixed by the experiment seed.
    '''
    rng = make_rng(seed, PARAMETER_STREAM)
    return 2.0 + float(rng.random())


def generate(spec):
    rng = make_rng(spec.seed, spec.stream)
    x_star = true_parameter(spec.seed)
    noise = standard_normal(rng, (spec.N, 2))
    A = 3.0 + 3.0 * noise[:, 0]
    b = A * x_star + 5.0 * noise[:, 1]
    return RegressionScenarios(A=A, b=b, x_star=x_star)


def _subset(scen, subset):
    if subset is None:
        return np.arange(scen.N)
    subset = np.asarray(subset, dtype=int).reshape(-1)
    if subset.size == 0:
        raise InputError("subset of scenarios is empty")
    if subset.min() < 0 or subset.max() >= scen.N:
        raise InputError(f"subset indices must lie in [0, {scen.N})")
    return subset


def residuals(scen, x, subset=None):
    '''
    A_i x - b_i for i in subset, in subset order.
    '''
    idx = _subset(scen, subset)
    return scen.A[idx] * x - scen.b[idx]


def max_abs_residual(A, b, x):
    '''
    g(x) = max_i |A_i x - b_i|, vectorized over an array of x values.
    '''
    x = np.asarray(x, dtype=float)
    return np.max(np.abs(np.multiply.outer(x, A) - b), axis=-1)


def _candidates(A, b):
    '''
    Every point where two of the lines +-(A_i x - b_i) cross, plus the roots b_i / A_i.
    Parallel pairs are skipped.
    '''
    i, j = np.triu_indices(A.shape[0], k=1)
    A_sum, A_diff = A[i] + A[j], A[i] - A[j]
    opposite = A_sum != 0.0
    same = A_diff != 0.0
    roots = A != 0.0
    return np.concatenate([
        (b[i] + b[j])[opposite] / A_sum[opposite],
        (b[i] - b[j])[same] / A_diff[same],
        b[roots] / A[roots],
    ])


def solve_minimax(scen, subset=None):
    '''
    Exact minimizer of max_{i in subset} |A_i x - b_i| by enumerating breakpoints
    of the piecewise linear objective. subset is a 0-based index array (None = all).
    '''
    idx = _subset(scen, subset)
    A, b = scen.A[idx], scen.b[idx]

    if np.all(A == 0.0):
        # g is constant in x
        S = float(np.max(np.abs(b)))
        logger.warning("solve_minimax: all A_i are zero on the subset, objective does not depend on x")
        return MinimaxSolution(x=0.0, S=S, active=idx[np.abs(b) >= S - ACTIVE_TOL], degenerate=True)

    candidates = _candidates(A, b)
    best_x, best_g = 0.0, np.inf
    for start in range(0, candidates.shape[0], CANDIDATE_CHUNK):
        chunk = candidates[start:start + CANDIDATE_CHUNK]
        g = max_abs_residual(A, b, chunk)
        k = int(np.argmin(g))
        if g[k] < best_g:
            best_x, best_g = float(chunk[k]), float(g[k])

    S = float(max_abs_residual(A, b, best_x))
    active = idx[np.abs(A * best_x - b) >= S - ACTIVE_TOL]
    logger.debug("solve_minimax: n=%d candidates=%d x=%.6f S=%.6f", idx.size, candidates.size, best_x, S)
    return MinimaxSolution(x=best_x, S=S, active=active)


if __name__ == "__main__":
    scen = generate(RegressionDataSpec(N=200, seed=0))
    sol = solve_minimax(scen)
    print(f"x* = {scen.x_star:.4f}, x = {sol.x:.4f}, S = {sol.S:.4f}, active = {sol.active}")
