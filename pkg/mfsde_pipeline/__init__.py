import json
import os
import pathlib

__version__ = "0.1.0"

config = {
    "loglevel": 25,
    "solver.pivot_threshold": 1e-14,
    "solver.rtol": 1e-12,
    "solver.maxiter_factor": 10,
    "solver.direct_max_unknowns": 250000,
    "kernel.cache_max_bytes": 512 * 1024**2,
    "kernel.chunk_rows": 256,
    "sde.batch_size": 1000,
    "cache_dir": None,
}


def load_local_config(filepath=None):
    """
    Update the package config from a local json file, then from the environment
    :param filepath: json file, defaults to $MFSDE_CONFIG or ./mfsde_local_conf.json
    :returns: the updated config dict
    """
    filepath = pathlib.Path(
        filepath or os.getenv("MFSDE_CONFIG") or "mfsde_local_conf.json"
    )
    if filepath.exists():
        with open(filepath) as f:
            config.update(json.load(f))

    if os.getenv("MFSDE_LOGLEVEL"):
        config["loglevel"] = int(os.getenv("MFSDE_LOGLEVEL"))
    if os.getenv("MFSDE_CACHE_DIR"):
        config["cache_dir"] = os.getenv("MFSDE_CACHE_DIR")

    return config


load_local_config()


class GridIndexError(IndexError):
    """Raise when a node index does not belong to the grid"""

    def __init__(self, msg=None):
        super().__init__("GridIndexError: \n{}".format(msg))


class ProblemDefinitionError(ValueError):
    """Raise when a problem is unknown or its coefficients fail the checks"""

    def __init__(self, msg=None):
        super().__init__("ProblemDefinitionError: \n{}".format(msg))


class ConfigError(ValueError):
    """Raise when a run configuration is invalid, naming the offending field"""

    def __init__(self, field, msg=None):
        self.field = field
        super().__init__("ConfigError: \n{}: {}".format(field, msg))


class ProvenanceError(ValueError):
    """Raise when two ensembles were not produced from compatible inputs"""

    def __init__(self, msg=None):
        super().__init__("ProvenanceError: \n{}".format(msg))


class NumericalFailure(RuntimeError):
    """Base class of failures raised while computing"""

    def __init__(self, msg=None):
        super().__init__("{}: \n{}".format(type(self).__name__, msg))


class LinearSolveError(NumericalFailure):
    """Raise when a factorization breaks down or an iterative solve stalls"""

    def __init__(self, msg=None, location=None, residuals=None):
        self.location = location
        self.residuals = list(residuals) if residuals is not None else []
        super().__init__(msg)


class NonFiniteStateError(NumericalFailure):
    """Raise when a simulated state is nan or inf"""

    def __init__(self, step, path, msg=None):
        self.step = step
        self.path = path
        super().__init__(
            "non-finite state at step {} of path {}{}".format(
                step, path, ": " + msg if msg else ""
            )
        )


class DensityError(NumericalFailure):
    """Raise when a density level cannot be normalized"""

    pass
