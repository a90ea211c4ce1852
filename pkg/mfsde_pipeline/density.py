"""
Piecewise-constant space-time density built from a DensityField, its moments,
and the interaction drift int K(t, x, y) p(t, y) dy fed to the SDE.
"""
import logging
import threading

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from mfsde_pipeline import DensityError
from mfsde_pipeline.fpsolve import KernelQuadrature
from mfsde_pipeline.grid import locate_cells, symmetric_sum

logger = logging.getLogger(__name__)

INTERACTION_MODES = ("exact", "interpolate")

_TIME_SLACK = 1e-12


class PiecewiseDensity:
    """
    p(t, x) = p^{n,k} on [t_n, t_{n+1}) x D_k, zero outside the domain.
    t = T reads level N.
    """

    def __init__(self, field):
        self.field = field
        self.grid = field.grid

    @property
    def values(self):
        return self.field.values

    def level_index(self, t):
        g = self.grid
        t = float(t)
        if not -_TIME_SLACK * g.T <= t <= g.T * (1 + _TIME_SLACK):
            raise ValueError("time {} outside [0, {}]".format(t, g.T))
        n = int(np.floor(t / g.kappa))
        if (n + 1) * g.kappa <= t:
            n += 1
        elif n * g.kappa > t:
            n -= 1
        return min(max(n, 0), g.N)

    def eval(self, t, x):
        """Vectorized over points x (..., d)"""
        g = self.grid
        level = self.values[self.level_index(t)]
        x = np.asarray(x, dtype=float)
        q, inside = locate_cells(g, x)
        flat = np.ravel_multi_index(
            tuple(np.moveaxis(np.where(inside[..., None], q, 0) + g.M, -1, 0)),
            g.shape,
        )
        return np.where(inside, level[flat], 0.0)


def evaluate(pd, t, x):
    """Value of the piecewise-constant density at one point"""
    x = np.asarray(x, dtype=float).reshape(pd.grid.d)
    return float(pd.eval(t, x))


def total_mass(pd, n):
    if not 0 <= n <= pd.grid.N:
        raise ValueError("level {} outside 0..{}".format(n, pd.grid.N))
    return float(np.sum(pd.values[n]) * pd.grid.cell_volume)


def density_moments(pd, n):
    """
    Mass-normalized mean and covariance of level n by node quadrature.

    :returns: (mean (d,), covariance (d, d))
    :raises DensityError: the level has zero or negative mass
    """
    g = pd.grid
    p = pd.values[n]
    mass = symmetric_sum(p) * g.cell_volume
    if not mass > 0:
        raise DensityError(
            "level {} has non-positive mass {:.3e}, moments undefined".format(n, mass)
        )
    x = g.nodes
    mean = symmetric_sum(x.T * p) * g.cell_volume / mass
    dx = x - mean
    cov = (
        symmetric_sum(dx.T[:, None, :] * dx.T[None, :, :] * p) * g.cell_volume / mass
    )
    return mean, cov


class InteractionField:
    """
    G_i(t_n, x^k) = sum_s K_i(t_n, x^k, x^s) p^{n,s} h^d per level, shape
    (N + 1, n_nodes, d). Levels are computed on first use and kept.
    """

    def __init__(self, pd, problem, kernel_mode="exact"):
        self.pd = pd
        self.problem = problem
        self.grid = pd.grid
        self.quadrature = KernelQuadrature(problem, pd.grid, mode=kernel_mode)
        self._levels = {}
        self._interpolators = {}
        self._lock = threading.Lock()

    def level(self, n):
        with self._lock:
            if n not in self._levels:
                G = self.quadrature(self.pd.values[n], self.grid.t(n))
                G.setflags(write=False)
                self._levels[n] = G
            return self._levels[n]

    def precompute(self, levels=None):
        for n in range(self.grid.N + 1) if levels is None else levels:
            self.level(n)
        return self

    @property
    def values(self):
        return np.stack([self.level(n) for n in range(self.grid.N + 1)])

    def interpolator(self, n):
        G = self.level(n)
        with self._lock:
            if n not in self._interpolators:
                g = self.grid
                self._interpolators[n] = RegularGridInterpolator(
                    (g.axis,) * g.d, G.reshape(g.shape + (g.d,)), method="linear"
                )
            return self._interpolators[n]


def interaction_precompute(pd, problem, kernel_mode="exact"):
    """All levels of the interaction field, same quadrature as the FP scheme"""
    return InteractionField(pd, problem, kernel_mode=kernel_mode).precompute()


def interaction_at(G, pd, problem, t, x, mode="interpolate"):
    """
    int K(t_n, x, y) p(t_n, y) dy at points x (..., d), t_n the floor level of t.

    exact: node sum at the points themselves.
    interpolate: multilinear interpolation of the node values of G, points
        outside the domain clamped to its faces.
    """
    if G is None:
        G = InteractionField(pd, problem)
    return interaction_on_level(G, pd.level_index(t), x, mode=mode)


def interaction_on_level(G, n, x, mode="interpolate"):
    if mode not in INTERACTION_MODES:
        raise ValueError("mode must be one of {}".format(INTERACTION_MODES))
    g = G.grid
    x = np.asarray(x, dtype=float)
    points = x.reshape(-1, g.d)

    if mode == "exact":
        out = G.quadrature(G.pd.values[n], g.t(n), targets=points)
    else:
        out = G.interpolator(n)(np.clip(points, g.axis[0], g.axis[-1]))
    return out.reshape(x.shape[:-1] + (g.d,))
