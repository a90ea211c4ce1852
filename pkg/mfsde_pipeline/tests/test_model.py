import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mfsde_pipeline import ProblemDefinitionError
from mfsde_pipeline.grid import Grid
from mfsde_pipeline.model import (
    builtin_example,
    check_ellipticity,
    check_problem,
    diffusion_matrix,
)
from mfsde_pipeline.tests.problem_utils import make_problem


def test_diffusion_matrix_examples():
    assert_allclose(diffusion_matrix(builtin_example(1), 0.0, [1.0]), [[0.1]])
    assert_allclose(
        diffusion_matrix(builtin_example(2), 0.3, [0.2, -0.1]),
        [[0.5, 0.4], [0.4, 0.5]],
    )
    A = diffusion_matrix(builtin_example(3), 0.0, [0.0, 0.0])
    assert_allclose(A, np.full((2, 2), 0.01))
    assert np.linalg.matrix_rank(A) == 1


def test_diffusion_matrix_is_vectorized():
    p = builtin_example(1)
    x = np.linspace(-2, 2, 7)[:, None]
    A = diffusion_matrix(p, 0.0, x)
    assert A.shape == (7, 1, 1)
    assert_allclose(A[:, 0, 0], x[:, 0] ** 2 / 10)


def test_ellipticity_example_2():
    report = check_ellipticity(builtin_example(2))
    assert_allclose(report.gamma1_est, 0.1, rtol=1e-12)
    assert_allclose(report.gamma2_est, 0.9, rtol=1e-12)
    assert not report.degenerate


def test_ellipticity_example_3_is_degenerate(caplog):
    report = check_ellipticity(builtin_example(3))
    assert report.degenerate
    assert report.gamma1_est < 1e-12
    assert "degenerate" in caplog.text


def test_ellipticity_example_1():
    report = check_ellipticity(builtin_example(1), alpha=6.0)
    assert report.gamma1_est > 0
    assert report.gamma2_est <= 3.6 + 1e-12


def test_ellipticity_needs_probes():
    with pytest.raises(ValueError):
        check_ellipticity(builtin_example(1), probes=0)


def test_drift_examples():
    assert_allclose(builtin_example(1).f(0.0, [0.0]), [0.0])
    assert_allclose(
        builtin_example(3).f(0.25, [0.0, 0.0]), [0.1, 0.0], rtol=0, atol=1e-15
    )
    r = 0.1 * np.sqrt(0.4)
    assert_allclose(builtin_example(2).f(0.0, [0.0, 0.0]), [r, r])


@pytest.mark.parametrize("example", [1, 2, 3])
def test_kernel_vanishes_at_origin(example):
    p = builtin_example(example)
    x = np.random.default_rng(1).uniform(-1, 1, size=(5, p.d))
    assert_allclose(p.K(0.5, x, np.zeros(p.d)), 0.0, atol=0)


@pytest.mark.parametrize(
    "example,alpha,M", [(1, 6.0, 512), (2, 4.0, 64), (3, 4.0, 64)]
)
def test_initial_density_integrates_to_one(example, alpha, M):
    p = builtin_example(example)
    g = Grid(d=p.d, alpha=alpha, M=M, T=p.T, N=1)
    mass = np.sum(p.p0(g.nodes)) * g.cell_volume
    assert_allclose(mass, 1.0, atol=1e-6)


def test_unknown_example():
    with pytest.raises(ProblemDefinitionError, match="unknown example"):
        builtin_example(4)


@pytest.mark.parametrize("example", [1, 2, 3])
def test_builtin_examples_pass_checks(example):
    assert check_problem(builtin_example(example), alpha=4.0)


def test_check_problem_rejects_negative_p0():
    p = make_problem(p0=lambda x: np.sum(np.asarray(x), axis=-1))
    with pytest.raises(ProblemDefinitionError, match="p0"):
        check_problem(p)


def test_check_problem_rejects_varying_flagged_sigma():
    p = dataclasses.replace(builtin_example(1), sigma_time_space_independent=True)
    with pytest.raises(ProblemDefinitionError, match="flagged constant"):
        check_problem(p)


def test_check_problem_rejects_flagged_kernel_depending_on_x():
    def kernel(t, x, y):
        return np.asarray(x, dtype=float) - np.asarray(y, dtype=float)

    p = make_problem(K=kernel, kernel_target_independent=True)
    with pytest.raises(ProblemDefinitionError, match="independent of x"):
        check_problem(p)
