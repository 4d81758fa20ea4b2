'''
Figures for a finished run directory. Reads the CSVs scenario-prune wrote and
saves PNGs under <run>/plots/:

    python plot_results.py runs/regress
    python plot_results.py runs/ocp
'''
import argparse
import json
import logging
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from scenario_io import ensure_dir  # noqa: E402

logger = logging.getLogger(__name__)


def _save(fig, folder, name):
    path = os.path.join(folder, name)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    logger.info("wrote %s", path)
    return path


def plot_regression_scenarios(scenarios, sweep, folder):
    '''
    Training scenarios in the (A, b) plane with the discarded ones marked and
    the robust strip |A x - b| <= S of the full and the reduced solution.
    '''
    mid = sweep.iloc[len(sweep) // 2]
    fig = plt.figure(figsize=(15, 6))
    retained = scenarios["retained"].astype(bool)
    plt.scatter(scenarios.loc[retained, "A"], scenarios.loc[retained, "b"], s=12, label="retained")
    plt.scatter(scenarios.loc[~retained, "A"], scenarios.loc[~retained, "b"], s=18, marker="x",
                color="red", label="discarded")

    a = np.linspace(scenarios["A"].min(), scenarios["A"].max(), 200)
    x_full = _full_slope(scenarios)
    for x, S, style, name in [(x_full, mid["S_full"], "--", "full"), (mid["x_reduced"], mid["S_reduced"], "-", "reduced")]:
        if np.isfinite(x) and np.isfinite(S):
            plt.fill_between(a, a * x - S, a * x + S, alpha=0.15, linestyle=style, label=f"{name} strip")
    plt.title(f"Scenarios, lam={mid['lam']:.2e}, kappa={int(mid['kappa'])}")
    plt.xlabel("A")
    plt.ylabel("b")
    plt.legend()
    return _save(fig, folder, "scenarios.png")


def _full_slope(scenarios):
    # residual = A x - b on the full solution; recover x from any scenario with A != 0
    usable = scenarios["A"].abs() > 1e-12
    if not usable.any():
        return np.nan
    pick = scenarios[usable].iloc[0]
    return float((pick["residual"] + pick["b"]) / pick["A"])


def plot_sweep(sweep, folder, cost_column):
    '''
    Out-of-sample violation probability (with one standard error) and cost against kappa.
    '''
    ok = sweep[sweep["status"] == "ok"].sort_values("kappa")
    fig, (left, right) = plt.subplots(1, 2, figsize=(15, 6))
    left.errorbar(ok["kappa"], ok["violation"], yerr=ok["std_err"], marker="o", capsize=3)
    left.set_xlabel("Discarded scenarios (kappa)")
    left.set_ylabel("Violation probability")
    left.set_title("Violation probability vs kappa")
    right.plot(ok["kappa"], ok[cost_column], marker="o")
    right.set_xlabel("Discarded scenarios (kappa)")
    right.set_ylabel(cost_column)
    right.set_title("Cost vs kappa")
    return _save(fig, folder, "sweep.png")


def plot_trajectories(trajectories, folder, upper_base=2.0, upper_amp=0.1, upper_freq=10.0):
    '''
    x1 trajectory bundles for each set in trajectories.csv with the time-varying upper bound.
    '''
    sets = list(trajectories["set"].unique())
    fig, axes = plt.subplots(1, len(sets), figsize=(15, 6), sharey=True, squeeze=False)
    for ax, name in zip(axes[0], sets):
        part = trajectories[trajectories["set"] == name]
        for _, path in part.groupby("scenario"):
            color = "tab:blue" if path["retained"].iloc[0] else "tab:red"
            ax.plot(path["t"], path["x1"], color=color, linewidth=0.6, alpha=0.5)
        t = np.sort(part["t"].unique())
        ax.plot(t, upper_base + upper_amp * np.cos(upper_freq * t), color="black", linewidth=2, label="upper bound")
        ax.set_title(name)
        ax.set_xlabel("t")
    axes[0][0].set_ylabel("x1")
    axes[0][0].legend()
    return _save(fig, folder, "trajectories.png")


def _upper_bound_params(run_dir):
    path = os.path.join(run_dir, "report.json")
    if not os.path.exists(path):
        return {}
    with open(path, mode="r", encoding="utf-8") as f:
        ocp = json.load(f).get("config", {}).get("ocp", {})
    return {key: ocp[key] for key in ("upper_base", "upper_amp", "upper_freq") if key in ocp}


def plot_run(run_dir):
    '''
    Draw every figure the files in run_dir allow. Returns the written paths.
    '''
    sweep_path = os.path.join(run_dir, "sweep.csv")
    if not os.path.exists(sweep_path):
        raise FileNotFoundError(f"{sweep_path} not found, is {run_dir} a regress or ocp run?")
    sweep = pd.read_csv(sweep_path)
    folder = ensure_dir(os.path.join(run_dir, "plots"))
    written = []

    scenarios_path = os.path.join(run_dir, "scenarios.csv")
    if os.path.exists(scenarios_path):
        written.append(plot_regression_scenarios(pd.read_csv(scenarios_path), sweep, folder))
        written.append(plot_sweep(sweep, folder, "cost"))

    trajectories_path = os.path.join(run_dir, "trajectories.csv")
    if os.path.exists(trajectories_path):
        written.append(plot_sweep(sweep, folder, "expected_cost"))
        bound = _upper_bound_params(run_dir)
        written.append(plot_trajectories(pd.read_csv(trajectories_path), folder, **bound))
    return written


def main(argv=None):
    parser = argparse.ArgumentParser(description="Plot a scenario-prune run directory.")
    parser.add_argument("run_dir")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        plot_run(args.run_dir)
    except OSError as e:
        logger.error("%s", e)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
