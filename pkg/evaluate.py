'''
Out-of-sample evaluation of scenario solutions and lam sweeps of the full
discard-and-resolve pipeline:

    1. solve the scenario program on all N training scenarios
    2. extract the quantity of interest per scenario (regression residuals,
       OCP margins to the upper bound) and build the L1 scaling weights
    3. reduce the kernel mean embedding at each lam
    4. re-solve on the retained scenarios
    5. estimate violation probability and expected cost on fresh samples
'''
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError
from tqdm import tqdm

from errors import InputError, ScenarioPruneError
from kernels import KernelSpec, gram
from ode_ocp import (OcpConfig, constraint_array, margins, ocp_cost, rollout,
                     sample_initial_states, solve_ocp)
from reduced_set import ReductionConfig, ScalingParams, reduce, scaling_weights
from sampling import EVAL_STREAM, TRAIN_STREAM
from scenario_lp import RegressionDataSpec, generate, residuals, solve_minimax

logger = logging.getLogger(__name__)

PROBLEMS = ("regression", "ocp")


@dataclass
class EvaluationReport:
    violation_prob: float
    expected_cost: float
    n_mc: int
    std_err_violation: float
    diagnostics: dict = field(default_factory=dict)
    bundle: object = field(default=None, repr=False)


@dataclass
class SweepRow:
    lam: float
    kappa: int
    violation_prob: float
    expected_cost: float
    std_err: float
    status: str = "ok"
    reduce_converged: bool = True
    solve_converged: bool = True
    mmd: float = math.nan
    kkt_residual: float = math.nan
    extras: dict = field(default_factory=dict)

    @property
    def failed(self):
        return self.status != "ok"

    def to_dict(self):
        row = {
            "lam": self.lam, "kappa": self.kappa, "violation": self.violation_prob,
            "std_err": self.std_err, "expected_cost": self.expected_cost, "mmd": self.mmd,
            "kkt_residual": self.kkt_residual, "reduce_converged": self.reduce_converged,
            "solve_converged": self.solve_converged, "status": self.status,
        }
        row.update(self.extras)
        return row


@dataclass
class SweepResult:
    '''
    Everything a sweep produced: the training set, the full solution and its
    evaluation, the kernel inputs and weights, one row per lam, and the reductions
    and reduced solutions behind each row (None where the row failed).
    '''
    problem: str
    rows: list
    full_solution: object
    full_report: EvaluationReport
    training: object
    features: np.ndarray
    weights: np.ndarray
    reductions: list
    solutions: list

    def to_frame(self):
        return pd.DataFrame([row.to_dict() for row in self.rows])

    @property
    def all_ok(self):
        return all(not row.failed and row.reduce_converged and row.solve_converged for row in self.rows)


def binomial_std_err(p, n):
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def eval_regression(x, spec, S, n_mc=None):
    '''
    Fraction of fresh scenarios with |A x - b| > S. spec should point at the
    evaluation stream; n_mc overrides spec.N. expected_cost is the program
    objective S; residual quantiles go into diagnostics.
    '''
    if n_mc is not None:
        spec = replace(spec, N=int(n_mc))
    if spec.stream == TRAIN_STREAM:
        logger.warning("eval_regression: evaluating on the training stream")
    scen = generate(spec)
    abs_res = np.abs(scen.A * x - scen.b)
    violated = abs_res > S
    p = float(np.mean(violated))
    quantiles = np.quantile(abs_res, [0.5, 0.9, 0.99])
    return EvaluationReport(
        violation_prob=p,
        expected_cost=float(S),
        n_mc=spec.N,
        std_err_violation=binomial_std_err(p, spec.N),
        diagnostics={
            "abs_residual_median": float(quantiles[0]),
            "abs_residual_q90": float(quantiles[1]),
            "abs_residual_q99": float(quantiles[2]),
            "abs_residual_max": float(np.max(abs_res)),
            "x_star": scen.x_star,
        },
    )


def eval_ocp(cfg, u, n_mc, seed, keep_bundle=False):
    '''
    Roll the fixed control sequence out from n_mc fresh initial states and count
    trajectories violating any state constraint at any RK4 node.
    '''
    if int(n_mc) != n_mc or n_mc < 1:
        raise InputError(f"n_mc must be >= 1, got {n_mc}")
    x0 = sample_initial_states(cfg, int(n_mc), seed, EVAL_STREAM)
    bundle = rollout(cfg, u, x0)
    violated = np.any(constraint_array(cfg, bundle) > 0.0, axis=(1, 2))
    p = float(np.mean(violated))
    return EvaluationReport(
        violation_prob=p,
        expected_cost=ocp_cost(cfg, bundle),
        n_mc=int(n_mc),
        std_err_violation=binomial_std_err(p, int(n_mc)),
        diagnostics={"min_margin": float(np.min(margins(cfg, bundle).minimum))},
        bundle=bundle if keep_bundle else None,
    )


def check_lambda_grid(lam_grid):
    grid = np.asarray(lam_grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise InputError("lambda grid is empty")
    if not np.all(np.isfinite(grid)) or np.any(grid < 0):
        raise InputError("lambda grid must hold finite values >= 0")
    if np.any(np.diff(grid) < 0):
        raise InputError("lambda grid must be sorted ascending")
    return grid


def _failed_row(lam, reason, reduction=None):
    return SweepRow(
        lam=float(lam), kappa=reduction.kappa if reduction is not None else -1,
        violation_prob=math.nan, expected_cost=math.nan, std_err=math.nan,
        status=f"failed: {reason}",
        reduce_converged=reduction.converged if reduction is not None else False,
        solve_converged=False,
    )


class _RegressionPipeline:
    def __init__(self, seed, n_train, n_mc, scaling):
        self.seed, self.n_mc = seed, n_mc
        self.training = generate(RegressionDataSpec(N=n_train, seed=seed, stream=TRAIN_STREAM))
        self.eval_spec = RegressionDataSpec(N=n_mc, seed=seed, stream=EVAL_STREAM)
        self.full = solve_minimax(self.training)
        self.full_report = eval_regression(self.full.x, self.eval_spec, self.full.S)
        quantity = residuals(self.training, self.full.x)
        self.features = quantity.reshape(-1, 1)
        self.weights = scaling_weights(quantity, scaling)

    def resolve(self, reduction):
        if reduction.kappa == 0:
            return self.full, self.full_report, {}
        sol = solve_minimax(self.training, reduction.retained)
        return sol, eval_regression(sol.x, self.eval_spec, sol.S), {}

    def extras(self, solution, report):
        return {
            "S_full": self.full.S, "S_reduced": solution.S, "x_reduced": solution.x,
        }


class _OcpPipeline:
    def __init__(self, seed, n_train, n_mc, scaling, cfg, progress):
        self.seed, self.n_mc, self.cfg, self.progress = seed, n_mc, cfg, progress
        self.training = sample_initial_states(cfg, n_train, seed, TRAIN_STREAM)
        self.full = solve_ocp(cfg, self.training, progress=progress)
        self.full_report = eval_ocp(cfg, self.full.u, n_mc, seed)
        self.full_bundle = rollout(cfg, self.full.u, self.training)
        margin = margins(cfg, self.full_bundle)
        self.features = margin.values
        self.weights = scaling_weights(margin.minimum, scaling)

    def resolve(self, reduction):
        retained = self.training[reduction.retained]
        # full solution scored on the same scenarios the reduced one is solved on
        cost_full_retained = ocp_cost(self.cfg, rollout(self.cfg, self.full.u, retained))
        if reduction.kappa == 0:
            return self.full, self.full_report, {"cost_full_retained": cost_full_retained}
        sol = solve_ocp(self.cfg, retained, warm_start=self.full.u)
        return sol, eval_ocp(self.cfg, sol.u, self.n_mc, self.seed), {"cost_full_retained": cost_full_retained}

    def extras(self, solution, report):
        return {
            "cost_full": self.full.cost, "cost_reduced": solution.cost,
            "max_violation": solution.max_violation,
        }


def _run_row(pipeline, K, lam, reduction_cfg):
    reduction = None
    try:
        reduction = reduce(K, replace(reduction_cfg, lam=float(lam), weights=pipeline.weights))
        if reduction.retained.size == 0:
            return _failed_row(lam, "every scenario was discarded", reduction), reduction, None
        solution, report, more = pipeline.resolve(reduction)
    except (ScenarioPruneError, LinAlgError) as e:
        logger.error("sweep: lam=%.3e failed: %s", lam, e)
        return _failed_row(lam, str(e), reduction), reduction, None

    extras = pipeline.extras(solution, report)
    extras.update(more)
    row = SweepRow(
        lam=float(lam),
        kappa=reduction.kappa,
        violation_prob=report.violation_prob,
        expected_cost=report.expected_cost,
        std_err=report.std_err_violation,
        reduce_converged=reduction.converged,
        solve_converged=getattr(solution, "converged", True),
        mmd=reduction.mmd,
        kkt_residual=reduction.kkt_residual,
        extras=extras,
    )
    return row, reduction, solution


def sweep(problem, lam_grid, seed, n_train, n_mc, kernel=None, scaling=None,
          reduction=None, ocp=None, threads=1, progress=False):
    '''
    Run the discard-and-resolve pipeline once per lam and evaluate each reduced
    solution out of sample. Rows come back in grid order; a row that fails is
    marked in its status and the sweep carries on.

    problem: "regression" or "ocp"
    lam_grid: ascending regularization coefficients
    seed: experiment seed (training and evaluation use separate streams of it)
    n_train, n_mc: training scenarios and Monte Carlo evaluation samples
    kernel, scaling, reduction, ocp: KernelSpec, ScalingParams, ReductionConfig, OcpConfig
    threads: rows evaluated concurrently
    '''
    if problem not in PROBLEMS:
        raise InputError(f"problem must be one of {PROBLEMS}, got {problem!r}")
    grid = check_lambda_grid(lam_grid)
    kernel = kernel or KernelSpec()
    scaling = scaling or ScalingParams()
    reduction = reduction or ReductionConfig()

    logger.info("sweep: %s, N=%d, n_mc=%d, %d lambda values", problem, n_train, n_mc, grid.size)
    if problem == "regression":
        pipeline = _RegressionPipeline(seed, n_train, n_mc, scaling)
    else:
        pipeline = _OcpPipeline(seed, n_train, n_mc, scaling, ocp or OcpConfig(), progress)
    K = gram(kernel, pipeline.features)

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        futures = [pool.submit(_run_row, pipeline, K, lam, reduction) for lam in grid]
        outcomes = [f.result() for f in tqdm(futures, desc=f"{problem} sweep", disable=not progress)]

    rows = [o[0] for o in outcomes]
    for row in rows:
        logger.info("sweep: lam=%.3e kappa=%d violation=%.3f cost=%.5f %s",
                    row.lam, row.kappa, row.violation_prob, row.expected_cost, row.status)
    return SweepResult(
        problem=problem,
        rows=rows,
        full_solution=pipeline.full,
        full_report=pipeline.full_report,
        training=pipeline.training,
        features=pipeline.features,
        weights=pipeline.weights,
        reductions=[o[1] for o in outcomes],
        solutions=[o[2] for o in outcomes],
    )


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    result = sweep("regression", np.logspace(-4, -1, 8), seed=0, n_train=200, n_mc=1000,
                   scaling=ScalingParams(kind="regression_softmax", T=3.0, standardize=True), progress=True)
    print(result.to_frame())
