"""
Mean-field SDE problems

    dX = [f(t, X) + int K(t, X, y) mu_t(dy)] dt + sigma(t, X) dW,  X(0) ~ p0

Coefficient callbacks are vectorized and must be reentrant:
    f(t, x)          x (..., d)               -> (..., d)
    K(t, x, y)       x, y broadcastable (..., d) -> (..., d)
    sigma(t, x)      x (..., d)               -> (..., d, m)
    p0(x)            x (..., d)               -> (...)
    sample_x0(rng, n)                         -> (n, d)
"""
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from mfsde_pipeline import ProblemDefinitionError

logger = logging.getLogger(__name__)

DEGENERACY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Problem:
    d: int
    m: int
    T: float
    f: Callable
    K: Callable
    sigma: Callable
    p0: Callable
    sample_x0: Callable
    sigma_time_space_independent: bool = False
    kernel_time_independent: bool = False
    kernel_translation_invariant: bool = False
    kernel_target_independent: bool = False
    name: str = "custom"


@dataclass(frozen=True)
class EllipticityReport:
    gamma1_est: float
    gamma2_est: float
    degenerate: bool


def diffusion_matrix(p, t, x):
    """A(t, x) = sigma sigma^T, shape (..., d, d)"""
    s = np.asarray(p.sigma(t, np.asarray(x, dtype=float)), dtype=float)
    return np.einsum("...im,...jm->...ij", s, s)


def _probe_points(p, probes, seed, alpha):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, p.T, size=probes)
    x = rng.uniform(-alpha, alpha, size=(probes, p.d))
    return t, x


def _at_probes(fn, t, x):
    return np.stack([np.asarray(fn(ti, xi), dtype=float) for ti, xi in zip(t, x)])


def check_ellipticity(p, probes=1000, seed=0, alpha=1.0):
    """
    Estimate the ellipticity bounds gamma1 <= y^T A y / |y|^2 <= gamma2 over
    random probes (t, x) in [0, T] x (-alpha, alpha)^d. Degeneracy is
    reported, not raised.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    t, x = _probe_points(p, probes, seed, alpha)
    A = np.stack([diffusion_matrix(p, ti, xi) for ti, xi in zip(t, x)])
    eigs = np.linalg.eigvalsh(A)
    gamma1 = max(float(eigs.min()), 0.0)
    gamma2 = max(float(eigs.max()), gamma1)
    report = EllipticityReport(
        gamma1_est=gamma1,
        gamma2_est=gamma2,
        degenerate=gamma1 < DEGENERACY_TOLERANCE,
    )
    if report.degenerate:
        logger.warning(
            "Diffusion of problem %s is degenerate (gamma1 ~ %.3e)", p.name, gamma1
        )
    return report


def check_problem(p, probes=1000, seed=0, alpha=1.0):
    """
    Check the problem invariants at random probes:
    p0 >= 0, A symmetric, sigma constant and K independent of x when flagged so.
    """
    t, x = _probe_points(p, probes, seed, alpha)

    p0 = np.asarray(p.p0(x), dtype=float)
    if np.any(p0 < 0) or not np.all(np.isfinite(p0)):
        raise ProblemDefinitionError(
            "p0 of problem {} is negative or non-finite at probe points".format(p.name)
        )

    A = np.stack([diffusion_matrix(p, ti, xi) for ti, xi in zip(t, x)])
    asym = np.linalg.norm(A - np.swapaxes(A, -1, -2), axis=(-2, -1))
    if np.any(asym > 1e-14 * np.linalg.norm(A, axis=(-2, -1))):
        raise ProblemDefinitionError(
            "A = sigma sigma^T of problem {} is not symmetric".format(p.name)
        )

    if p.sigma_time_space_independent:
        s = _at_probes(p.sigma, t, x)
        if np.any(s != s[0]):
            raise ProblemDefinitionError(
                "sigma of problem {} is flagged constant but varies".format(p.name)
            )

    if p.kernel_target_independent:
        for ti, xi in zip(t, x):
            here = np.asarray(p.K(ti, xi, x), dtype=float)
            there = np.asarray(p.K(ti, -xi, x), dtype=float)
            if np.any(here != there):
                raise ProblemDefinitionError(
                    "K of problem {} is flagged independent of x but "
                    "varies".format(p.name)
                )
    return True


# ---- builtin examples ----


def _bump(y):
    return np.sin(y) / (1 + y**2)


def _kernel_1d(t, x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    g = 0.1 * _bump(y[..., 0])
    shape = np.broadcast_shapes(x.shape, y.shape)
    return np.broadcast_to(g[..., None], shape).copy()


def _kernel_2d(t, x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    g = 0.1 * _bump(y[..., 0]) * _bump(y[..., 1])
    shape = np.broadcast_shapes(x.shape, y.shape)
    return np.broadcast_to(g[..., None], shape).copy()


def _gaussian_density(variance, d):
    def p0(x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x**2, axis=-1)
        return np.exp(-r2 / (2 * variance)) / (2 * np.pi * variance) ** (d / 2)

    return p0


def _gaussian_sampler(variance, d):
    def sample_x0(rng, n=1):
        return np.sqrt(variance) * rng.standard_normal((n, d))

    return sample_x0


def _example_1():
    def f(t, x):
        return 0.1 * (np.asarray(x, dtype=float) + np.sin(t))

    def sigma(t, x):
        x = np.asarray(x, dtype=float)
        return (x / np.sqrt(10))[..., None]

    return Problem(
        d=1,
        m=1,
        T=1.0,
        f=f,
        K=_kernel_1d,
        sigma=sigma,
        # standard normal, the law of X0
        p0=_gaussian_density(1.0, 1),
        sample_x0=_gaussian_sampler(1.0, 1),
        kernel_time_independent=True,
        kernel_target_independent=True,
        name="example-1",
    )


_SIGMA_2 = np.array([[2.0, 1.0], [1.0, 2.0]]) / np.sqrt(10)
_SIGMA_3 = np.array([[0.1], [0.1]])


def _constant_sigma(s):
    def sigma(t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(s, x.shape[:-1] + s.shape).copy()

    return sigma


def _example_2():
    def f(t, x):
        x = np.asarray(x, dtype=float)
        r = 0.1 * np.sqrt(x[..., 0] ** 2 + x[..., 1] ** 2 + 0.4)
        return np.stack([r, r], axis=-1)

    return Problem(
        d=2,
        m=2,
        T=1.0,
        f=f,
        K=_kernel_2d,
        sigma=_constant_sigma(_SIGMA_2),
        p0=_gaussian_density(0.04, 2),
        sample_x0=_gaussian_sampler(0.04, 2),
        sigma_time_space_independent=True,
        kernel_time_independent=True,
        kernel_target_independent=True,
        name="example-2",
    )


def _example_3():
    def f(t, x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        return 0.1 * np.stack(
            [
                -1.5 * x1 + 0.5 * x2 + np.sin(2 * np.pi * t),
                x1 / 3 - 4 * x2 / 3 + np.cos(2 * np.pi * t),
            ],
            axis=-1,
        )

    return Problem(
        d=2,
        m=1,
        T=1.0,
        f=f,
        K=_kernel_2d,
        sigma=_constant_sigma(_SIGMA_3),
        p0=_gaussian_density(0.01, 2),
        sample_x0=_gaussian_sampler(0.01, 2),
        sigma_time_space_independent=True,
        kernel_time_independent=True,
        kernel_target_independent=True,
        name="example-3",
    )


EXAMPLES = {1: _example_1, 2: _example_2, 3: _example_3}


def builtin_example(example_id):
    try:
        return EXAMPLES[int(example_id)]()
    except (KeyError, ValueError, TypeError):
        raise ProblemDefinitionError(
            "unknown example id {!r}, options are {}".format(
                example_id, sorted(EXAMPLES)
            )
        )
