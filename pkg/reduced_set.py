'''
Reduced-set expansion of the empirical kernel mean embedding.

Given a Gram matrix K over N scenarios and beta = (1/N, ..., 1/N), solve

    min_alpha  (alpha - beta)^T K (alpha - beta) + lam * sum_i w_i |alpha_i|

and discard every scenario whose expansion weight is zero. The smooth part is
the squared RKHS distance between the sparse expansion and the empirical
embedding, so lam trades approximation quality for sparsity.
'''
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, lstsq
from scipy.special import softmax

from errors import InputError
from kernels import check_gram, mmd_sq, uniform_weights

logger = logging.getLogger(__name__)

SCALING_KINDS = ("uniform", "regression_softmax", "ocp_softmax")

POWER_ITERATIONS = 100
POWER_TOL = 1e-10
# Rayleigh quotients approach lambda_max from below
STEP_SAFETY = 1.01
DESCENT_TOL = 1e-12
POLISH_EVERY = 50
POLISH_ROUNDS = 20
POLISH_FORCE_EVERY = 10
# singular values of K_SS below this fraction of the largest are ignored
POLISH_RCOND = 1e-11
BUDGET_LAMBDA_MIN = 1e-8
BUDGET_BISECTIONS = 40


@dataclass
class ReductionConfig:
    '''
    lam: regularization coefficient (>= 0)
    weights: positive L1 scaling vector w, None means all ones
    zero_tol: |alpha_i| <= zero_tol marks scenario i as discarded
    max_iter: proximal gradient iteration cap
    grad_tol: KKT residual target
    nonneg: restrict alpha to [0, inf)
    '''
    lam: float = 0.0
    weights: np.ndarray = None
    zero_tol: float = 1e-10
    max_iter: int = 20000
    grad_tol: float = 1e-9
    nonneg: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise InputError(f"lam must be >= 0, got {self.lam}")
        if not self.zero_tol > 0:
            raise InputError(f"zero_tol must be > 0, got {self.zero_tol}")
        if int(self.max_iter) < 1:
            raise InputError(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.grad_tol > 0:
            raise InputError(f"grad_tol must be > 0, got {self.grad_tol}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise InputError("weights must be a finite, strictly positive vector")
            self.weights = w

    def weights_for(self, n):
        if self.weights is None:
            return np.ones(n)
        if self.weights.shape[0] != n:
            raise InputError(f"weights have length {self.weights.shape[0]}, Gram matrix has {n} scenarios")
        return self.weights


@dataclass
class ReductionResult:
    alpha: np.ndarray
    discarded: np.ndarray
    retained: np.ndarray
    mmd_sq_achieved: float
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float
    lam: float
    history: np.ndarray = field(default=None, repr=False)

    @property
    def kappa(self):
        return int(self.discarded.shape[0])

    @property
    def mmd(self):
        return math.sqrt(self.mmd_sq_achieved)

    def summary(self):
        return {
            "lam": self.lam,
            "kappa": self.kappa,
            "mmd_sq": self.mmd_sq_achieved,
            "mmd": self.mmd,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "kkt_residual": self.kkt_residual,
        }


@dataclass(frozen=True)
class ScalingParams:
    '''
    kind: "uniform", "regression_softmax" or "ocp_softmax"
    T: softness of the regression softmax, w_i ~ exp(T * |residual_i|)
    C, eps_s: OCP softmax, w_i ~ exp(C / max(eps_s, eps_s + margin_i))
    symmetric: regression only; False uses exp(T * residual_i) as written, one-sided
    standardize: divide regression residuals by their sample std first
    '''
    kind: str = "uniform"
    T: float = 1.0
    C: float = 0.1
    eps_s: float = 0.05
    symmetric: bool = True
    standardize: bool = False

    def __post_init__(self):
        if self.kind not in SCALING_KINDS:
            raise InputError(f"scaling kind must be one of {SCALING_KINDS}, got {self.kind!r}")
        for name in ("T", "C", "eps_s"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InputError(f"{name} must be > 0, got {value}")

    def to_dict(self):
        return {
            "kind": self.kind, "T": self.T, "C": self.C, "eps_s": self.eps_s,
            "symmetric": self.symmetric, "standardize": self.standardize,
        }


def largest_eigenvalue(K, n_iter=POWER_ITERATIONS, tol=POWER_TOL):
    '''
    Power iteration on a PSD matrix. Starts from the all-ones direction,
    which has a large component on the Perron vector of a Gram matrix with
    positive entries.
    '''
    n = K.shape[0]
    v = np.full(n, 1.0 / math.sqrt(n))
    estimate = 0.0
    for _ in range(n_iter):
        Kv = K @ v
        norm = float(np.linalg.norm(Kv))
        if norm == 0.0:
            return 0.0
        v = Kv / norm
        new_estimate = float(v @ (K @ v))
        if abs(new_estimate - estimate) <= tol * max(1.0, abs(new_estimate)):
            return new_estimate
        estimate = new_estimate
    return estimate


def kill_lambda(K, weights, nonneg=False):
    '''
    Smallest lam for which alpha = 0 is optimal: |grad f(0)_i| = 2 |(K beta)_i| <= lam w_i.
    '''
    K = np.asarray(K, dtype=float)
    K_beta = K @ uniform_weights(K.shape[0])
    drive = np.maximum(2.0 * K_beta, 0.0) if nonneg else 2.0 * np.abs(K_beta)
    return float(np.max(drive / weights))


def _prox(v, threshold, nonneg):
    if nonneg:
        return np.maximum(v - threshold, 0.0)
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def _kkt(grad, alpha, lam_w, nonneg):
    nonzero = alpha != 0.0
    residual = np.empty_like(alpha)
    residual[nonzero] = np.abs(grad[nonzero] + lam_w[nonzero] * np.sign(alpha[nonzero]))
    if nonneg:
        residual[~nonzero] = np.maximum(-(grad[~nonzero] + lam_w[~nonzero]), 0.0)
    else:
        residual[~nonzero] = np.maximum(np.abs(grad[~nonzero]) - lam_w[~nonzero], 0.0)
    return float(np.max(residual)) if residual.size else 0.0


class _Problem:
    '''
    Evaluations of f(alpha) + lam * g(alpha) sharing one product K @ (alpha - beta).
    '''
    def __init__(self, K, lam, weights, nonneg):
        self.K = K
        self.beta = uniform_weights(K.shape[0])
        self.K_beta = K @ self.beta
        self.lam_w = lam * weights
        self.nonneg = nonneg

    def evaluate(self, alpha):
        diff = alpha - self.beta
        K_diff = self.K @ diff
        smooth = max(float(diff @ K_diff), 0.0)
        objective = smooth + float(np.sum(self.lam_w * np.abs(alpha)))
        grad = 2.0 * K_diff
        return objective, grad, _kkt(grad, alpha, self.lam_w, self.nonneg)

    def gradient(self, alpha):
        return 2.0 * (self.K @ (alpha - self.beta))

    def polish(self, alpha):
        '''
        Newton steps on the current support with the signs held fixed, towards
        K_SS alpha_S = (K beta)_S - lam w_S sign(alpha_S) / 2.

        Each step is a truncated least-squares solve, so a numerically singular
        K_SS (near-duplicate scenarios) only loses the directions it cannot
        resolve. A step that would flip a sign is cut at the first zero crossing
        and that scenario leaves the support. Returns None if no step is usable.
        '''
        candidate = alpha.copy()
        moved = False
        for _ in range(POLISH_ROUNDS):
            support = np.flatnonzero(candidate)
            if support.size == 0:
                break
            signs = np.sign(candidate[support])
            current = candidate[support]
            K_ss = self.K[np.ix_(support, support)]
            target = self.K_beta[support] - 0.5 * self.lam_w[support] * signs
            try:
                step = lstsq(K_ss, target - K_ss @ current, cond=POLISH_RCOND)[0]
            except (LinAlgError, ValueError):
                break
            if not np.all(np.isfinite(step)):
                break
            shrinking = signs * step < 0
            ratios = np.full(support.size, np.inf)
            ratios[shrinking] = -current[shrinking] / step[shrinking]
            first = int(np.argmin(ratios))
            moved = True
            if ratios[first] >= 1.0:
                candidate[support] = current + step
                break
            candidate[support] = current + ratios[first] * step
            candidate[support[first]] = 0.0
        return candidate if moved else None


def _solve(K, cfg, lipschitz, init=None):
    n = K.shape[0]
    weights = cfg.weights_for(n)
    problem = _Problem(K, cfg.lam, weights, cfg.nonneg)
    beta = problem.beta

    if cfg.lam >= kill_lambda(K, weights, cfg.nonneg):
        alpha = np.zeros(n)
        objective, _, kkt = problem.evaluate(alpha)
        return _result(K, alpha, cfg, objective, 0, kkt <= cfg.grad_tol, kkt, np.array([objective]))

    alpha = beta.copy() if init is None else np.asarray(init, dtype=float).copy()
    if cfg.nonneg:
        alpha = np.maximum(alpha, 0.0)
    objective, _, kkt = problem.evaluate(alpha)
    history = [objective]
    if kkt <= cfg.grad_tol:
        return _result(K, alpha, cfg, objective, 0, True, kkt, np.array(history))

    step = 1.0 / lipschitz
    threshold = problem.lam_w * step
    y = alpha.copy()
    t = 1.0
    last_support = None
    iterations = 0
    for iterations in range(1, int(cfg.max_iter) + 1):
        z = _prox(y - step * problem.gradient(y), threshold, cfg.nonneg)
        z_objective, _, z_kkt = problem.evaluate(z)
        if z_objective > objective + DESCENT_TOL:
            # momentum overshot: restart from a plain proximal gradient step
            t = 1.0
            z = _prox(alpha - step * problem.gradient(alpha), threshold, cfg.nonneg)
            z_objective, _, z_kkt = problem.evaluate(z)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = z + ((t - 1.0) / t_next) * (z - alpha)
        alpha, objective, kkt, t = z, z_objective, z_kkt, t_next
        history.append(objective)
        if kkt <= cfg.grad_tol:
            break

        if iterations % POLISH_EVERY == 0:
            support = (np.flatnonzero(alpha).tobytes(), np.sign(alpha[alpha != 0]).tobytes())
            # a support that keeps flickering still gets polished now and then
            if support == last_support or iterations % (POLISH_EVERY * POLISH_FORCE_EVERY) == 0:
                candidate = problem.polish(alpha)
                if candidate is not None:
                    c_objective, _, c_kkt = problem.evaluate(candidate)
                    if c_objective <= objective + DESCENT_TOL and (c_kkt < kkt or c_objective < objective):
                        alpha, objective, kkt = candidate, c_objective, c_kkt
                        y, t = alpha.copy(), 1.0
                        history.append(objective)
                        if kkt <= cfg.grad_tol:
                            break
            last_support = support

    converged = kkt <= cfg.grad_tol
    if not converged:
        logger.warning("reduce: lam=%.3e stopped after %d iterations with KKT residual %.3e",
                       cfg.lam, iterations, kkt)
    return _result(K, alpha, cfg, objective, iterations, converged, kkt, np.array(history))


def _result(K, alpha, cfg, objective, iterations, converged, kkt, history):
    discarded, retained = select_indices(alpha, cfg.zero_tol)
    achieved = mmd_sq(K, alpha, uniform_weights(K.shape[0]))
    logger.debug("reduce: lam=%.3e kappa=%d mmd=%.3e iterations=%d kkt=%.3e",
                 cfg.lam, discarded.shape[0], math.sqrt(achieved), iterations, kkt)
    return ReductionResult(
        alpha=alpha,
        discarded=discarded,
        retained=retained,
        mmd_sq_achieved=achieved,
        objective=float(objective),
        iterations=int(iterations),
        converged=bool(converged),
        kkt_residual=float(kkt),
        lam=float(cfg.lam),
        history=history,
    )


def _lipschitz(K):
    return 2.0 * STEP_SAFETY * max(largest_eigenvalue(K), np.finfo(float).tiny)


def reduce(K, cfg, init=None):
    '''
    Lagrangian form. Accelerated proximal gradient (step 1/L, L = 2 lambda_max(K))
    with a restart whenever the objective would increase, plus a support polish
    every few iterations. Starts from beta unless init is given.
    Non-convergence is reported through result.converged, never raised.
    '''
    K = check_gram(K)
    return _solve(K, cfg, _lipschitz(K), init=init)


def reduce_with_budget(K, cfg, epsilon):
    '''
    Budget form: the sparsest solution found on the regularization path whose
    RKHS distance to the empirical embedding stays within epsilon.
    Bisects log(lam) between 1e-8 and the all-zero threshold; cfg.lam is ignored.
    '''
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise InputError(f"epsilon must be > 0, got {epsilon}")
    K = check_gram(K)
    lipschitz = _lipschitz(K)
    weights = cfg.weights_for(K.shape[0])
    lam_kill = kill_lambda(K, weights, cfg.nonneg)

    def within_budget(result):
        return result.mmd <= epsilon

    top = _solve(K, replace(cfg, lam=lam_kill), lipschitz)
    if within_budget(top):
        return top

    best = _solve(K, replace(cfg, lam=BUDGET_LAMBDA_MIN), lipschitz)
    if not within_budget(best) or lam_kill <= BUDGET_LAMBDA_MIN:
        logger.warning("reduce_with_budget: epsilon=%.3e is below the distance reachable at lam=%.1e (%.3e)",
                       epsilon, BUDGET_LAMBDA_MIN, best.mmd)
        return replace(best, converged=False)

    lo, hi = math.log(BUDGET_LAMBDA_MIN), math.log(lam_kill)
    for _ in range(BUDGET_BISECTIONS):
        mid = 0.5 * (lo + hi)
        candidate = _solve(K, replace(cfg, lam=math.exp(mid)), lipschitz, init=best.alpha)
        if within_budget(candidate):
            lo, best = mid, candidate
        else:
            hi = mid
    logger.info("reduce_with_budget: epsilon=%.3e -> lam=%.3e kappa=%d", epsilon, best.lam, best.kappa)
    return best


def select_indices(alpha, zero_tol):
    '''
    Returns (discarded, retained) as sorted 0-based index arrays.
    discarded = {i : |alpha_i| <= zero_tol}, retained is the complement.
    '''
    if not zero_tol > 0:
        raise InputError(f"zero_tol must be > 0, got {zero_tol}")
    alpha = np.asarray(alpha, dtype=float)
    zero = np.abs(alpha) <= zero_tol
    return np.flatnonzero(zero), np.flatnonzero(~zero)


def scaling_weights(values, params):
    '''
    Per-scenario L1 weights, normalized to mean 1.
    values: residuals (regression_softmax), minimum margins (ocp_softmax),
            anything of length N (uniform)
    '''
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if values.ndim != 1 or values.shape[0] < 1:
        raise InputError(f"scaling inputs must be a non-empty vector, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise InputError("scaling inputs must be finite")
    n = values.shape[0]
    if params.kind == "uniform":
        return np.ones(n)

    if params.kind == "regression_softmax":
        residuals = values
        if params.standardize and n > 1:
            spread = float(np.std(residuals, ddof=1))
            if spread > 0:
                residuals = residuals / spread
        logits = params.T * (np.abs(residuals) if params.symmetric else residuals)
    else:
        logits = params.C / np.maximum(params.eps_s, params.eps_s + values)

    w = softmax(logits) * n
    # far tails of the softmax can underflow
    w = np.maximum(w, np.finfo(float).tiny)
    return w / np.mean(w)


if __name__ == "__main__":
    from kernels import KernelSpec, gram

    rng = np.random.default_rng(0)
    points = rng.normal(size=(100, 1))
    K = gram(KernelSpec(), points)
    for lam in [0.0, 1e-3, 1e-2, 1e-1]:
        result = reduce(K, ReductionConfig(lam=lam))
        print(f"lam={lam:.0e} kappa={result.kappa} mmd={result.mmd:.4f} converged={result.converged}")
