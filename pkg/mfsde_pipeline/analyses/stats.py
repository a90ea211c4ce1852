"""
Error norms, convergence orders and moment tables.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import pandas as pd

from mfsde_pipeline.density import PiecewiseDensity, density_moments
from mfsde_pipeline.fpsolve import solve_fp
from mfsde_pipeline.particle import simulate_particles
from mfsde_pipeline.sde import simulate_ensemble

logger = logging.getLogger(__name__)

METHODS = ("pdf", "trajectories", "particle")


def restrict(fine_level, fine_g, coarse_g):
    """
    Inject fine node values onto the coarse nodes: coarse k <- fine r k.
    """
    if fine_g.d != coarse_g.d or fine_g.alpha != coarse_g.alpha:
        raise ValueError("grids cover different domains")
    if fine_g.M % coarse_g.M:
        raise ValueError(
            "grids are not nested: M_fine={} is not a multiple of M_coarse={}".format(
                fine_g.M, coarse_g.M
            )
        )
    r = fine_g.M // coarse_g.M
    values = np.asarray(fine_level)
    lead = values.shape[:-1]
    on_grid = values.reshape(lead + fine_g.shape)
    window = (Ellipsis,) + (slice(None, None, r),) * fine_g.d
    return on_grid[window].reshape(lead + (coarse_g.n_nodes,))


def estimate_orders(errors, resolutions):
    """
    Orders between consecutive rows of a table sorted from the finest
    resolution up, each resolution double the previous one.

    Args:
        errors: positive errors, one per resolution
        resolutions: step or mesh sizes, ascending

    Returns:
        list of len(errors) - 1 orders, orders[i] = log2(errors[i+1] / errors[i])

    Raises:
        ValueError: non-positive error, or resolutions that do not double
    """
    errors = np.asarray(errors, dtype=float)
    resolutions = np.asarray(resolutions, dtype=float)
    if errors.shape != resolutions.shape:
        raise ValueError("need one error per resolution")
    if np.any(~(errors > 0)):
        raise ValueError("errors must be positive, got {}".format(errors.tolist()))
    ratios = resolutions[1:] / resolutions[:-1]
    if not np.allclose(ratios, 2.0, rtol=1e-9, atol=0):
        raise ValueError(
            "resolutions must double from row to row, got {}".format(
                resolutions.tolist()
            )
        )
    return np.log2(errors[1:] / errors[:-1]).tolist()


@dataclass
class ConvergenceReport:
    axis: str
    resolutions: List[float]
    errors: List[float]
    orders: List[float] = field(default_factory=list)
    reference: str = ""

    def __post_init__(self):
        if self.axis not in ("temporal", "spatial"):
            raise ValueError("axis must be 'temporal' or 'spatial'")
        if not self.orders and len(self.errors) > 1:
            self.orders = estimate_orders(self.errors, self.resolutions)

    def to_frame(self):
        return pd.DataFrame(
            dict(
                resolution=self.resolutions,
                error=self.errors,
                order=[np.nan] + list(self.orders),
            )
        )

    def loglog_frame(self):
        return pd.DataFrame(
            {
                "log2(resolution)": np.log2(self.resolutions),
                "log2(error)": np.log2(self.errors),
            }
        )

    def to_csv(self, filepath):
        self.to_frame().to_csv(filepath, index=False, float_format="%.10g")

    def loglog_to_csv(self, filepath):
        self.loglog_frame().to_csv(filepath, index=False, float_format="%.10g")


def convergence_report(axis, resolutions, errors, reference=""):
    """Report with rows sorted from the finest resolution"""
    order = np.argsort(resolutions)
    return ConvergenceReport(
        axis=axis,
        resolutions=[float(resolutions[i]) for i in order],
        errors=[float(errors[i]) for i in order],
        reference=reference,
    )


def sample_moments(e, n=None):
    """
    Unbiased mean and covariance over the paths of an ensemble at step n
    (default the final step).

    :returns: (mean (d,), covariance (d, d), dict of standard errors with
        keys 'mean' (d,) and 'covariance' (d, d))
    """
    X = e.final if n is None else e.at(n)
    P = X.shape[0]
    if P < 2:
        raise ValueError("need at least 2 paths, got {}".format(P))
    mean = X.mean(axis=0)
    dx = X - mean
    cov = dx.T @ dx / (P - 1)
    cov = (cov + cov.T) / 2
    products = dx[:, :, None] * dx[:, None, :]
    se = dict(
        mean=np.sqrt(np.diag(cov) / P),
        covariance=products.std(axis=0, ddof=1) / np.sqrt(P),
    )
    return mean, cov, se


def moment_columns(d):
    if d == 1:
        return ["E_X", "V_X"]
    names = ["E_X{}".format(i + 1) for i in range(d)]
    names += ["V_X{}".format(i + 1) for i in range(d)]
    names += [
        "V_X{}X{}".format(i + 1, j + 1) for i in range(d) for j in range(i + 1, d)
    ]
    return names


def _moment_row(mean, cov):
    d = len(mean)
    row = list(mean) + list(np.diag(cov))
    row += [cov[i, j] for i in range(d) for j in range(i + 1, d)]
    return row


@dataclass
class MomentTable:
    d: int
    means: Dict[str, np.ndarray] = field(default_factory=dict)
    covariances: Dict[str, np.ndarray] = field(default_factory=dict)
    standard_errors: Dict[str, dict] = field(default_factory=dict)

    def add(self, method, mean, cov, se=None):
        if method not in METHODS:
            raise ValueError("method must be one of {}".format(METHODS))
        mean, cov = np.asarray(mean, dtype=float), np.asarray(cov, dtype=float)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("non-finite moments for method {}".format(method))
        self.means[method] = mean
        self.covariances[method] = cov
        if se is not None:
            self.standard_errors[method] = se

    def to_frame(self):
        rows = [m for m in METHODS if m in self.means]
        frame = pd.DataFrame(
            [_moment_row(self.means[m], self.covariances[m]) for m in rows],
            index=pd.Index(rows, name="method"),
            columns=moment_columns(self.d),
        )
        return frame

    def to_csv(self, filepath):
        self.to_frame().to_csv(filepath, float_format="%.10g")


def compare_methods(
    problem,
    grid,
    n_paths,
    particle_cfg,
    seed,
    kappa_sde=None,
    mode="interpolate",
    field=None,
    workers=1,
    progress=False,
):
    """
    Mean and covariance at T by the numerical density, by trajectories of the
    density-coupled SDE and by the particle system.

    Args:
        problem: Problem
        grid: Grid of the density (ignored when field is given)
        n_paths: trajectory count
        particle_cfg: ParticleConfig, or None to skip the particle row
        seed: trajectory seed
        kappa_sde: SDE step, default the density step
        mode: interaction evaluation of the trajectories
        field: precomputed DensityField

    Returns:
        MomentTable
    """
    field = field if field is not None else solve_fp(problem, grid, progress=progress)
    pd_ = PiecewiseDensity(field)
    table = MomentTable(d=problem.d)

    mean, cov = density_moments(pd_, field.grid.N)
    table.add("pdf", mean, cov)

    e = simulate_ensemble(
        problem,
        pd_,
        n_paths,
        kappa_sde or field.grid.kappa,
        seed,
        mode=mode,
        record="final",
        workers=workers,
        progress=progress,
    )
    table.add("trajectories", *sample_moments(e))

    if particle_cfg is not None:
        e = simulate_particles(
            problem, particle_cfg, workers=workers, progress=progress
        )
        table.add("particle", *sample_moments(e))

    logger.log(25, "Moments of {}:\n{}".format(problem.name, table.to_frame()))
    return table
