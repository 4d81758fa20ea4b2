'''
Experiment configuration: one JSON document per run.

Top-level keys (all optional except "experiment"):
    experiment   "regress" | "ocp" | "reduce"
    seed         unsigned 64-bit integer
    N            training scenarios (regress: 200, ocp: 100)
    n_mc         Monte Carlo evaluation samples (regress: 1000, ocp: 100)
    kernel       {"kind", "bandwidth", "degree", "offset"}
    lambda_grid  ascending list of lam values
    scaling      {"kind", "T", "C", "eps_s", "symmetric", "standardize"}
    reduction    {"zero_tol", "max_iter", "grad_tol", "nonneg"}
    ocp          any OcpConfig field, see ode_ocp.OcpConfig
    epsilon      reduce only: RKHS distance budget, replaces lambda_grid
    input        reduce only: scenario CSV
    output_dir   where the run writes its files
'''
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from errors import ConfigError, InputError
from evaluate import check_lambda_grid
from kernels import KernelSpec
from ode_ocp import OcpConfig
from reduced_set import ReductionConfig, ScalingParams
from sampling import check_seed

logger = logging.getLogger(__name__)

EXPERIMENTS = ("regress", "ocp", "reduce")
THREADS_ENV = "SCENARIO_PRUNE_THREADS"

DEFAULTS = {
    "regress": {
        "N": 200, "n_mc": 1000,
        "lambda_grid": [float(v) for v in np.logspace(-4, -1, 8)],
        "scaling": ScalingParams(kind="regression_softmax", T=3.0, standardize=True),
    },
    "ocp": {
        "N": 100, "n_mc": 100,
        "lambda_grid": [0.0, 1e-5, 1e-4, 1e-3, 5e-3],
        "scaling": ScalingParams(kind="ocp_softmax", C=0.1, eps_s=0.05),
    },
    "reduce": {
        "N": 1, "n_mc": 1,
        "lambda_grid": [1e-2],
        "scaling": ScalingParams(kind="uniform"),
    },
}

# the fields of ReductionConfig a config file may set; lam comes from the grid
REDUCTION_KEYS = ("zero_tol", "max_iter", "grad_tol", "nonneg")


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    N: int = 200
    n_mc: int = 1000
    kernel: KernelSpec = field(default_factory=KernelSpec)
    lambda_grid: list = field(default_factory=list)
    scaling: ScalingParams = field(default_factory=ScalingParams)
    reduction: ReductionConfig = field(default_factory=ReductionConfig)
    ocp: OcpConfig = field(default_factory=OcpConfig)
    epsilon: float = None
    input: str = None
    output_dir: str = None

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "N": self.N,
            "n_mc": self.n_mc,
            "kernel": self.kernel.to_dict(),
            "lambda_grid": [float(v) for v in self.lambda_grid],
            "scaling": self.scaling.to_dict(),
            "reduction": {key: getattr(self.reduction, key) for key in REDUCTION_KEYS},
            "ocp": self.ocp.to_dict(),
            "epsilon": self.epsilon,
            "input": self.input,
            "output_dir": self.output_dir,
        }


def _check_type(value, default, path):
    '''
    JSON values must match the type of the field's default.
    '''
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    else:
        ok = True
    if not ok:
        raise ConfigError(path, f"expected {type(default).__name__}, got {value!r}")
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(float(v) for v in value)
    return value


def _build(cls, data, path, allowed=None, base=None):
    '''
    Construct dataclass cls from a JSON object, reporting problems with dotted paths.
    base supplies defaults that differ from the class defaults.
    '''
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {data!r}")
    base = base if base is not None else cls()
    names = allowed or [f.name for f in dataclasses.fields(cls)]
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{path}.{key}", "unknown key")
        kwargs[key] = _check_type(value, getattr(base, key), f"{path}.{key}")
    try:
        return dataclasses.replace(base, **kwargs)
    except InputError as e:
        # find the key that is invalid on its own
        for key, value in kwargs.items():
            try:
                dataclasses.replace(base, **{key: value})
            except InputError:
                raise ConfigError(f"{path}.{key}", str(e)) from e
        raise ConfigError(path, str(e)) from e


def _positive_int(data, key, default):
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(key, f"must be an integer >= 1, got {value!r}")
    return value


def parse_config(data, seed=None, output_dir=None):
    '''
    Validate a decoded JSON document. seed and output_dir override the document.
    '''
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown key")

    experiment = data.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {EXPERIMENTS}, got {experiment!r}")
    defaults = DEFAULTS[experiment]

    try:
        seed = check_seed(seed if seed is not None else data.get("seed", 0))
    except InputError as e:
        raise ConfigError("seed", str(e)) from e

    try:
        grid = [float(v) for v in check_lambda_grid(data.get("lambda_grid", defaults["lambda_grid"]))]
    except (InputError, TypeError, ValueError) as e:
        raise ConfigError("lambda_grid", str(e)) from e

    epsilon = data.get("epsilon")
    if epsilon is not None:
        if isinstance(epsilon, bool) or not isinstance(epsilon, (int, float)) or not epsilon > 0:
            raise ConfigError("epsilon", f"must be a number > 0, got {epsilon!r}")
        epsilon = float(epsilon)

    input_path = data.get("input")
    if experiment == "reduce" and not input_path:
        raise ConfigError("input", "the reduce experiment needs an input CSV")
    if input_path is not None and not isinstance(input_path, str):
        raise ConfigError("input", f"must be a path string, got {input_path!r}")

    out = output_dir if output_dir is not None else data.get("output_dir", os.path.join("runs", experiment))
    if not isinstance(out, str):
        raise ConfigError("output_dir", f"must be a path string, got {out!r}")

    config = ExperimentConfig(
        experiment=experiment,
        seed=seed,
        N=_positive_int(data, "N", defaults["N"]),
        n_mc=_positive_int(data, "n_mc", defaults["n_mc"]),
        kernel=_build(KernelSpec, data.get("kernel", {}), "kernel"),
        lambda_grid=grid,
        scaling=_build(ScalingParams, data.get("scaling", {}), "scaling", base=defaults["scaling"]),
        reduction=_build(ReductionConfig, data.get("reduction", {}), "reduction", allowed=REDUCTION_KEYS),
        ocp=_build(OcpConfig, data.get("ocp", {}), "ocp"),
        epsilon=epsilon,
        input=input_path,
        output_dir=out,
    )
    logger.debug("config: %s", config.to_dict())
    return config


def load_config(path, seed=None, output_dir=None, experiment=None):
    '''
    Read and validate a JSON config file. experiment, when given, is the command
    the file is run under; a document without an "experiment" key takes it.
    '''
    try:
        with open(path, mode="r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError("<root>", f"{path} is not valid JSON ({e.msg} at line {e.lineno})") from e
    if experiment is not None and isinstance(data, dict):
        data.setdefault("experiment", experiment)
        if data["experiment"] != experiment:
            raise ConfigError("experiment", f"config is for {data['experiment']!r}, command is {experiment!r}")
    return parse_config(data, seed=seed, output_dir=output_dir)


def threads_from_env():
    '''
    SCENARIO_PRUNE_THREADS caps worker threads; unset or 0 means one per CPU.
    '''
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        value = int(raw)
    except ValueError as e:
        raise ConfigError(THREADS_ENV, f"must be an integer, got {raw!r}") from e
    if value < 0:
        raise ConfigError(THREADS_ENV, f"must be >= 0, got {value}")
    return value if value > 0 else (os.cpu_count() or 1)
