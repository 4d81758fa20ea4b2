'''
Naive ways of discarding kappa scenarios, for comparison with the kernel
reduced-set selection at the same kappa:
    random: kappa scenarios chosen uniformly without replacement
    largest_residual: the kappa scenarios with the largest |residual| under the
                      full solution (greedy removal of corner points)
'''
import logging

import numpy as np
import pandas as pd

from errors import InputError
from evaluate import eval_regression
from sampling import BASELINE_STREAM, EVAL_STREAM, make_rng
from scenario_lp import RegressionDataSpec, residuals, solve_minimax

logger = logging.getLogger(__name__)


def _check_kappa(n, kappa):
    if int(kappa) != kappa or not 0 <= kappa < n:
        raise InputError(f"kappa must be an integer in [0, {n - 1}], got {kappa}")
    return int(kappa)


def _split(n, discarded):
    discarded = np.sort(np.asarray(discarded, dtype=int))
    return discarded, np.setdiff1d(np.arange(n), discarded)


def random_discard(n, kappa, rng):
    kappa = _check_kappa(n, kappa)
    return _split(n, rng.choice(n, size=kappa, replace=False))


def largest_residual_discard(values, kappa):
    values = np.abs(np.asarray(values, dtype=float).reshape(-1))
    kappa = _check_kappa(values.shape[0], kappa)
    # stable sort keeps ties in index order
    order = np.argsort(-values, kind="stable")
    return _split(values.shape[0], order[:kappa])


def compare_at_kappa(scen, kappa_values, n_mc, seed):
    '''
    Re-solve the regression after each baseline discards kappa scenarios and
    evaluate out of sample. Returns one row per (method, kappa).
    '''
    full = solve_minimax(scen)
    full_residuals = residuals(scen, full.x)
    eval_spec = RegressionDataSpec(N=n_mc, seed=seed, stream=EVAL_STREAM)
    rng = make_rng(seed, BASELINE_STREAM)

    rows = []
    for kappa in kappa_values:
        for method in ("random", "largest_residual"):
            if method == "random":
                _, retained = random_discard(scen.N, kappa, rng)
            else:
                _, retained = largest_residual_discard(full_residuals, kappa)
            sol = solve_minimax(scen, retained)
            report = eval_regression(sol.x, eval_spec, sol.S)
            rows.append({
                "method": method, "kappa": int(kappa), "S": sol.S, "x": sol.x,
                "violation": report.violation_prob, "std_err": report.std_err_violation,
            })
            logger.debug("baseline %s kappa=%d S=%.5f violation=%.3f", method, kappa, sol.S, report.violation_prob)
    return pd.DataFrame(rows, columns=["method", "kappa", "S", "x", "violation", "std_err"])


if __name__ == "__main__":
    from scenario_lp import generate

    scen = generate(RegressionDataSpec(N=200, seed=0))
    print(compare_at_kappa(scen, [0, 20, 50, 100], n_mc=1000, seed=0))
