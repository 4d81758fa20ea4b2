'''
Positive definite kernels, Gram matrices and squared maximum mean discrepancy
between weighted kernel mean embeddings over one scenario set.
'''
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigvalsh
from scipy.spatial.distance import pdist, squareform

from errors import InputError, NumericalError

logger = logging.getLogger(__name__)

KERNEL_KINDS = ("gaussian", "polynomial")
DEFAULT_BANDWIDTH = 1.0 / math.sqrt(2.0)

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-8
MMD_CLAMP_TOL = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    '''
    kind: "gaussian" -> exp(-||x - y||^2 / (2 bandwidth^2))
          "polynomial" -> (x . y + offset)^degree
    bandwidth is only read by the gaussian kernel, degree and offset only by the polynomial one.
    '''
    kind: str = "gaussian"
    bandwidth: float = DEFAULT_BANDWIDTH
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise InputError(f"kernel kind must be one of {KERNEL_KINDS}, got {self.kind!r}")
        if not (math.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise InputError(f"bandwidth must be positive, got {self.bandwidth}")
        if int(self.degree) != self.degree or self.degree < 1:
            raise InputError(f"degree must be an integer >= 1, got {self.degree}")
        if not (math.isfinite(self.offset) and self.offset >= 0):
            raise InputError(f"offset must be >= 0, got {self.offset}")

    def to_dict(self):
        return {"kind": self.kind, "bandwidth": self.bandwidth, "degree": int(self.degree), "offset": self.offset}


def as_scenarios(data):
    '''
    Turn data into an N x d float matrix, one realization per row.
    A 1-d array is read as N scalar scenarios (d = 1).
    '''
    scenarios = np.asarray(data, dtype=float)
    if scenarios.ndim == 1:
        scenarios = scenarios.reshape(-1, 1)
    if scenarios.ndim != 2:
        raise InputError(f"scenarios must be a 1-d or 2-d array, got shape {scenarios.shape}")
    if scenarios.shape[0] < 1 or scenarios.shape[1] < 1:
        raise InputError(f"need at least one scenario of dimension >= 1, got shape {scenarios.shape}")
    if not np.all(np.isfinite(scenarios)):
        bad = np.argwhere(~np.isfinite(scenarios))[0]
        raise InputError(f"non-finite scenario entry at row {bad[0]}, column {bad[1]}")
    return scenarios


def _as_point(x):
    point = np.atleast_1d(np.asarray(x, dtype=float))
    if point.ndim != 1:
        raise InputError(f"kernel arguments must be vectors, got shape {point.shape}")
    if not np.all(np.isfinite(point)):
        raise InputError("kernel arguments must be finite")
    return point


def kernel_eval(spec, x, y):
    x = _as_point(x)
    y = _as_point(y)
    if x.shape != y.shape:
        raise InputError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    if spec.kind == "gaussian":
        sq_dist = float(np.sum((x - y) ** 2))
        return math.exp(-sq_dist / (2.0 * spec.bandwidth**2))
    return float((np.dot(x, y) + spec.offset) ** spec.degree)


def gram(spec, scenarios):
    '''
    Dense N x N Gram matrix K[i, j] = k(xi_i, xi_j).
    '''
    scenarios = as_scenarios(scenarios)
    n = scenarios.shape[0]
    if spec.kind == "gaussian":
        if n == 1:
            return np.ones((1, 1))
        sq_dist = squareform(pdist(scenarios, metric="sqeuclidean"))
        K = np.exp(-sq_dist / (2.0 * spec.bandwidth**2))
    else:
        K = (scenarios @ scenarios.T + spec.offset) ** spec.degree
        # matmul does not promise bitwise symmetry
        K = 0.5 * (K + K.T)
    logger.debug("gram: kernel=%s n=%d d=%d", spec.kind, n, scenarios.shape[1])
    return K


def extreme_eigenvalues(K):
    eigs = eigvalsh(K)
    return float(eigs[0]), float(eigs[-1])


def check_gram(K):
    '''
    Validate a Gram matrix: square, finite, symmetric to 1e-12 and
    numerically PSD (smallest eigenvalue >= -1e-8 * max(1, largest)).
    Returns K as a float array.
    '''
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] < 1:
        raise InputError(f"Gram matrix must be square and non-empty, got shape {K.shape}")
    if not np.all(np.isfinite(K)):
        raise InputError("Gram matrix has non-finite entries")
    asym = float(np.max(np.abs(K - K.T)))
    if asym > SYMMETRY_TOL:
        raise NumericalError(f"Gram matrix is not symmetric (max |K - K^T| = {asym:.3e})")
    smallest, largest = extreme_eigenvalues(K)
    if smallest < -PSD_TOL * max(1.0, largest):
        raise NumericalError(f"Gram matrix is not positive semidefinite (smallest eigenvalue {smallest:.3e})")
    return K


def uniform_weights(n):
    '''
    Empirical embedding weights beta = (1/N, ..., 1/N).
    '''
    if n < 1:
        raise InputError(f"need n >= 1, got {n}")
    return np.full(n, 1.0 / n)


def _as_weights(weights, n, name):
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 1 or weights.shape[0] != n:
        raise InputError(f"{name} must have length {n}, got shape {weights.shape}")
    if not np.all(np.isfinite(weights)):
        raise InputError(f"{name} has non-finite entries")
    return weights


def mmd_sq(K, alpha, beta):
    '''
    Squared RKHS distance between sum_i alpha_i phi(xi_i) and sum_i beta_i phi(xi_i),
    i.e. (alpha - beta)^T K (alpha - beta). Values in [-1e-10, 0) are rounding
    noise and come back as 0.
    '''
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    diff = _as_weights(alpha, n, "alpha") - _as_weights(beta, n, "beta")
    value = float(diff @ (K @ diff))
    if value < 0.0:
        if value < -MMD_CLAMP_TOL:
            raise NumericalError(f"squared MMD is negative ({value:.3e}); is K positive semidefinite?")
        value = 0.0
    return value


if __name__ == "__main__":
    spec = KernelSpec()
    K = gram(spec, [0.0, 1.0])
    print(K)
    print("MMD^2 between the two points:", mmd_sq(K, [1.0, 0.0], [0.0, 1.0]))
