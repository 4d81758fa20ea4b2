'''
Command line entry point:

    scenario-prune <regress|ocp|reduce> --config <path> [--seed <u64>] [--out <dir>]

regress  min-max robust regression: lam sweep, out-of-sample evaluation, baselines
ocp      Van der Pol scenario OCP: lam sweep, Monte Carlo evaluation, trajectories
reduce   reduced-set selection on a user-supplied scenario CSV

Exit status: 0 on success, 1 if any stage did not converge or a sweep row failed,
2 for config/input errors, 3 for I/O errors, 4 for numerical errors.
'''
import argparse
import logging
import os
import platform
import sys
from dataclasses import replace

import matplotlib
import numpy as np
import pandas as pd
import scipy
import tqdm
from tqdm.contrib.logging import logging_redirect_tqdm

from baselines import compare_at_kappa
from errors import InputError, NumericalError
from evaluate import eval_ocp, sweep
from experiment_config import EXPERIMENTS, load_config, threads_from_env
from kernels import gram
from ode_ocp import rollout
from reduced_set import ReductionConfig, reduce, reduce_with_budget, scaling_weights
from sampling import seed_provenance
from scenario_io import ensure_dir, load_scenarios_csv, write_csv, write_json

logger = logging.getLogger("scenario_prune")

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_INPUT = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

REGRESS_SWEEP_COLUMNS = ["lam", "kappa", "S_full", "S_reduced", "x_reduced", "violation", "std_err",
                         "cost", "mmd", "kkt_residual", "reduce_converged", "status"]
OCP_SWEEP_COLUMNS = ["lam", "kappa", "cost_full", "cost_full_retained", "cost_reduced", "violation",
                     "std_err", "expected_cost", "max_violation", "mmd", "kkt_residual",
                     "reduce_converged", "solve_converged", "status"]


def versions():
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "tqdm": tqdm.__version__,
        "matplotlib": matplotlib.__version__,
    }


def mid_index(grid):
    '''
    Row whose discarded set is written out in detail.
    '''
    return len(grid) // 2


def _report(config, stages, exit_status):
    return {
        "config": config.to_dict(),
        "seeds": seed_provenance(config.seed),
        "versions": versions(),
        "stages": stages,
        "exit_status": exit_status,
    }


def _row_stages(result):
    return [
        {"lam": row.lam, "kappa": row.kappa, "status": row.status,
         "reduce_converged": row.reduce_converged, "solve_converged": row.solve_converged}
        for row in result.rows
    ]


def run_regress(config, threads=1, progress=True):
    out = ensure_dir(config.output_dir)
    result = sweep("regression", config.lambda_grid, config.seed, config.N, config.n_mc,
                   kernel=config.kernel, scaling=config.scaling, reduction=config.reduction,
                   threads=threads, progress=progress)
    scen, full = result.training, result.full_solution

    mid = mid_index(config.lambda_grid)
    reduction = result.reductions[mid]
    n = scen.N
    write_csv(pd.DataFrame({
        "index": np.arange(n),
        "A": scen.A,
        "b": scen.b,
        "residual": result.features[:, 0],
        "weight": result.weights,
        "alpha": reduction.alpha if reduction is not None else np.full(n, np.nan),
        "retained": np.isin(np.arange(n), reduction.retained) if reduction is not None else np.ones(n, dtype=bool),
    }), os.path.join(out, "scenarios.csv"))

    frame = result.to_frame().rename(columns={"expected_cost": "cost"})
    write_csv(frame.reindex(columns=REGRESS_SWEEP_COLUMNS), os.path.join(out, "sweep.csv"))

    kappas = sorted({row.kappa for row in result.rows if not row.failed and 0 <= row.kappa < n})
    write_csv(compare_at_kappa(scen, kappas, config.n_mc, config.seed), os.path.join(out, "baselines.csv"))

    status = EXIT_OK if result.all_ok else EXIT_NOT_CONVERGED
    stages = {
        "full_solve": {"x": full.x, "S": full.S, "degenerate": full.degenerate, "x_star": scen.x_star,
                       "violation": result.full_report.violation_prob},
        "rows": _row_stages(result),
    }
    write_json(_report(config, stages, status), os.path.join(out, "report.json"))
    return status


def _trajectory_frame(label, bundle, retained):
    n, nodes = bundle.states.shape[:2]
    return pd.DataFrame({
        "set": label,
        "scenario": np.repeat(np.arange(n), nodes),
        "node": np.tile(np.arange(nodes), n),
        "t": np.tile(bundle.t, n),
        "x1": bundle.states[:, :, 0].reshape(-1),
        "x2": bundle.states[:, :, 1].reshape(-1),
        "retained": np.repeat(retained, nodes),
    })


def run_ocp(config, threads=1, progress=True):
    out = ensure_dir(config.output_dir)
    cfg = config.ocp
    result = sweep("ocp", config.lambda_grid, config.seed, config.N, config.n_mc,
                   kernel=config.kernel, scaling=config.scaling, reduction=config.reduction,
                   ocp=cfg, threads=threads, progress=progress)
    full = result.full_solution

    frame = result.to_frame()
    write_csv(frame.reindex(columns=OCP_SWEEP_COLUMNS), os.path.join(out, "sweep.csv"))

    controls = [("full", np.nan, full.u)]
    controls += [("reduced", row.lam, sol.u) for row, sol in zip(result.rows, result.solutions) if sol is not None]
    step_start = cfg.grid()[cfg.control_nodes()[:-1]]
    write_csv(pd.DataFrame([
        {"solution": label, "lam": lam, "step": k, "t_start": step_start[k], "u": u[k]}
        for label, lam, u in controls for k in range(cfg.M)
    ]), os.path.join(out, "controls.csv"))

    mid = mid_index(config.lambda_grid)
    reduction, reduced = result.reductions[mid], result.solutions[mid]
    n = result.training.shape[0]
    retained = np.isin(np.arange(n), reduction.retained) if reduction is not None else np.ones(n, dtype=bool)
    parts = [_trajectory_frame("train_full", rollout(cfg, full.u, result.training), retained)]
    eval_full = eval_ocp(cfg, full.u, config.n_mc, config.seed, keep_bundle=True).bundle
    parts.append(_trajectory_frame("eval_full", eval_full, np.ones(config.n_mc, dtype=bool)))
    if reduced is not None:
        eval_reduced = eval_ocp(cfg, reduced.u, config.n_mc, config.seed, keep_bundle=True).bundle
        parts.append(_trajectory_frame("eval_reduced", eval_reduced, np.ones(config.n_mc, dtype=bool)))
    write_csv(pd.concat(parts, ignore_index=True), os.path.join(out, "trajectories.csv"))

    status = EXIT_OK if (result.all_ok and full.converged) else EXIT_NOT_CONVERGED
    stages = {
        "full_solve": dict(full.summary(), u=full.u.tolist(), violation=result.full_report.violation_prob),
        "rows": _row_stages(result),
    }
    write_json(_report(config, stages, status), os.path.join(out, "report.json"))
    return status


def run_reduce(config, threads=1, progress=True):
    out = ensure_dir(config.output_dir)
    scenarios, weights, columns = load_scenarios_csv(config.input)
    n = scenarios.shape[0]
    if weights is None:
        # non-uniform scalings read the first column as the per-scenario quantity
        weights = scaling_weights(scenarios[:, 0], config.scaling)
    K = gram(config.kernel, scenarios)
    base = ReductionConfig(weights=weights, zero_tol=config.reduction.zero_tol, max_iter=config.reduction.max_iter,
                           grad_tol=config.reduction.grad_tol, nonneg=config.reduction.nonneg)

    if config.epsilon is not None:
        results = [reduce_with_budget(K, base, config.epsilon)]
    else:
        results = [reduce(K, replace(base, lam=lam)) for lam in config.lambda_grid]

    write_csv(pd.concat([
        pd.DataFrame({"lam": r.lam, "index": np.arange(n), "alpha": r.alpha,
                      "retained": np.isin(np.arange(n), r.retained)})
        for r in results
    ], ignore_index=True), os.path.join(out, "reduction.csv"))
    last = results[-1]
    write_csv(pd.DataFrame(scenarios[last.retained], columns=columns), os.path.join(out, "retained.csv"))

    status = EXIT_OK if all(r.converged for r in results) else EXIT_NOT_CONVERGED
    stages = [dict(r.summary(), discarded=r.discarded.tolist(), retained=r.retained.tolist()) for r in results]
    write_json(stages, os.path.join(out, "reduction.json"))
    write_json(_report(config, {"reductions": [r.summary() for r in results]}, status),
               os.path.join(out, "report.json"))
    return status


RUNNERS = {"regress": run_regress, "ocp": run_ocp, "reduce": run_reduce}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="scenario-prune",
        description="Discard sampled scenarios with a sparse reduced-set kernel mean embedding.")
    parser.add_argument("experiment", choices=EXPERIMENTS, help="which experiment to run")
    parser.add_argument("--config", required=True, help="path of the JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed (unsigned 64-bit)")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--quiet", action="store_true", help="hide progress bars")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, seed=args.seed, output_dir=args.out, experiment=args.experiment)
        threads = threads_from_env()
        with logging_redirect_tqdm():
            status = RUNNERS[args.experiment](config, threads=threads, progress=not args.quiet)
    except InputError as e:
        logger.error("%s", e)
        return EXIT_INPUT
    except NumericalError as e:
        logger.error("%s", e)
        return EXIT_NUMERICAL
    except OSError as e:
        logger.error("%s", e)
        return EXIT_IO
    if status != EXIT_OK:
        logger.warning("finished with exit status %d (a stage did not converge or a row failed)", status)
    return status


if __name__ == "__main__":
    sys.exit(main())
