import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mfsde_pipeline import NonFiniteStateError, ProvenanceError
from mfsde_pipeline.analyses.stats import estimate_orders
from mfsde_pipeline.density import PiecewiseDensity
from mfsde_pipeline.fpsolve import DensityField, initial_level
from mfsde_pipeline.grid import Grid
from mfsde_pipeline.model import builtin_example
from mfsde_pipeline.sde import (
    brownian_path,
    coarsen,
    em_step,
    simulate_ensemble,
    strong_error,
)
from mfsde_pipeline.tests.problem_utils import (
    constant_drift,
    constant_sigma,
    linear_drift,
    make_problem,
    point_sampler,
    zero_kernel,
)


def frozen_density(problem, g, scale=1.0):
    values = np.tile(scale * initial_level(problem, g), (g.N + 1, 1))
    return PiecewiseDensity(
        DensityField(grid=g, values=values, description="frozen x{:g}".format(scale))
    )


@pytest.fixture(scope="module")
def example_1():
    p = builtin_example(1)
    return p, frozen_density(p, Grid(d=1, alpha=6.0, M=64, T=1.0, N=16))


# ---- Brownian increments ----


def test_brownian_path_is_deterministic():
    a = brownian_path(7, 3, 64, 2, 1 / 64)
    b = brownian_path(7, 3, 64, 2, 1 / 64)
    assert_array_equal(a.increments, b.increments)
    assert a.increments.shape == (64, 2)
    other_stream = brownian_path(7, 4, 64, 2, 1 / 64)
    other_seed = brownian_path(8, 3, 64, 2, 1 / 64)
    assert not np.array_equal(a.increments, other_stream.increments)
    assert not np.array_equal(a.increments, other_seed.increments)


def test_brownian_increments_are_centered():
    kappa = 2.0**-8
    n = 10**6
    path = brownian_path(0, 0, n, 1, kappa)
    assert abs(path.increments.mean()) <= 4 * np.sqrt(kappa / n)
    assert_allclose(path.increments.var(), kappa, rtol=0.01)


def test_coarsen_sums_pairs():
    fine = brownian_path(1, 0, 32, 2, 1 / 32)
    coarse = coarsen(fine, 2)
    assert coarse.N == 16
    assert coarse.kappa == 1 / 16
    assert_array_equal(
        coarse.increments, fine.increments[0::2] + fine.increments[1::2]
    )
    with pytest.raises(ValueError):
        coarsen(fine, 3)


# ---- single steps ----


def test_em_step_without_coefficients_is_identity():
    p = make_problem(d=2)
    state = np.array([[0.5, -1.0], [2.0, 3.0]])
    dW = np.ones((2, 2))
    assert_array_equal(em_step(p, None, state, 0, 0.0, dW, 0.1), state)


def test_em_step_constant_drift():
    p = make_problem(d=1, f=constant_drift(2.0))
    new = em_step(p, None, np.zeros((3, 1)), 0, 0.0, np.zeros((3, 1)), 0.25)
    assert_allclose(new, 0.5)


def test_em_step_reports_non_finite_states():
    def f(t, x):
        return np.where(np.asarray(x) > 0, np.inf, 0.0)

    p = make_problem(d=1, f=f)
    state = np.array([[-1.0], [-2.0], [1.0]])
    with pytest.raises(NonFiniteStateError) as err:
        em_step(p, None, state, 4, 0.0, np.zeros((3, 1)), 0.1, paths=[10, 11, 12])
    assert err.value.step == 4
    assert err.value.path == 12


# ---- ensembles ----


def test_simulate_is_deterministic(example_1):
    p, pd_ = example_1
    kwargs = dict(n_paths=23, kappa=1 / 16, seed=5)
    a = simulate_ensemble(p, pd_, **kwargs)
    b = simulate_ensemble(p, pd_, **kwargs)
    c = simulate_ensemble(p, pd_, batch_size=4, workers=3, **kwargs)
    assert a.paths.shape == (23, 17, 1)
    assert_array_equal(a.paths, b.paths)
    assert_array_equal(a.paths, c.paths)
    assert_array_equal(a.at(0), a.x0)


def test_record_final_keeps_endpoints(example_1):
    p, pd_ = example_1
    full = simulate_ensemble(p, pd_, 10, 1 / 16, 2)
    final = simulate_ensemble(p, pd_, 10, 1 / 16, 2, record="final")
    assert_array_equal(final.levels, [0, 16])
    assert_array_equal(final.final, full.final)
    with pytest.raises(ValueError):
        final.at(3)


def test_interaction_modes_agree_for_position_free_kernel(example_1):
    p, pd_ = example_1
    exact = simulate_ensemble(p, pd_, 50, 1 / 16, 1, mode="exact", record="final")
    interp = simulate_ensemble(p, pd_, 50, 1 / 16, 1, record="final")
    assert_allclose(exact.final, interp.final, rtol=0, atol=1e-12)


def test_sde_steps_refine_density_steps(example_1):
    p, pd_ = example_1
    with pytest.raises(ValueError, match="power of two"):
        simulate_ensemble(p, pd_, 4, 1 / 12, 0)
    with pytest.raises(ValueError):
        simulate_ensemble(p, pd_, 4, 1 / 8, 0, kappa_brownian=1 / 12)


def test_constant_paths_without_coefficients():
    p = make_problem(d=2, sample_x0=point_sampler(0.3, 2))
    e = simulate_ensemble(p, None, 1, 1 / 8, 0)
    assert_array_equal(e.paths, 0.3)


def test_zero_kernel_ignores_density():
    p = dataclasses.replace(builtin_example(1), K=zero_kernel)
    g = Grid(d=1, alpha=6.0, M=32, T=1.0, N=8)
    a = simulate_ensemble(p, frozen_density(p, g), 20, 1 / 8, 3)
    b = simulate_ensemble(p, frozen_density(p, g, scale=3.0), 20, 1 / 8, 3)
    assert_array_equal(a.paths, b.paths)


def test_linear_drift_mean():
    kappa, N = 1 / 16, 16
    p = make_problem(
        d=1,
        f=linear_drift(0.1),
        sigma=constant_sigma([[0.5]]),
        sample_x0=point_sampler(1.0),
    )
    e = simulate_ensemble(p, None, 20000, kappa, 11, record="final")
    X = e.final[:, 0]
    se = X.std(ddof=1) / np.sqrt(len(X))
    assert abs(X.mean() - (1 + 0.1 * kappa) ** N) <= 4 * se


def test_deterministic_euler_is_first_order():
    p = make_problem(d=1, f=linear_drift(0.1), sample_x0=point_sampler(1.0))
    fine = simulate_ensemble(p, None, 4, 1 / 256, 0, kappa_brownian=1 / 256)
    ladder = (32, 16, 8)
    errors = [
        strong_error(
            simulate_ensemble(p, None, 4, 1 / N, 0, kappa_brownian=1 / 256), fine
        )
        for N in ladder
    ]
    orders = estimate_orders(errors, [1 / N for N in ladder])
    assert all(0.9 <= order <= 1.2 for order in orders), orders


# ---- strong errors ----


def test_strong_error_of_identical_ensembles(example_1):
    p, pd_ = example_1
    e = simulate_ensemble(p, pd_, 8, 1 / 16, 0, record="final")
    assert strong_error(e, e) == 0.0


def test_strong_error_shrinks_with_coupled_paths(example_1):
    p, pd_ = example_1
    fine = simulate_ensemble(p, pd_, 200, 1 / 64, 0, kappa_brownian=1 / 64)
    coarse = simulate_ensemble(p, pd_, 200, 1 / 16, 0, kappa_brownian=1 / 64)
    independent = simulate_ensemble(p, pd_, 200, 1 / 16, 1, kappa_brownian=1 / 64)
    coupled = strong_error(coarse, fine)
    assert 0 < coupled < np.sqrt(np.mean((independent.final - fine.final) ** 2))


def test_strong_error_checks_provenance(example_1):
    p, pd_ = example_1
    fine = simulate_ensemble(p, pd_, 8, 1 / 32, 0, kappa_brownian=1 / 32)
    with pytest.raises(ProvenanceError, match="seeds"):
        strong_error(
            simulate_ensemble(p, pd_, 8, 1 / 16, 1, kappa_brownian=1 / 32), fine
        )
    with pytest.raises(ProvenanceError, match="base steps"):
        strong_error(simulate_ensemble(p, pd_, 8, 1 / 16, 0), fine)
    other = frozen_density(p, pd_.grid, scale=0.5)
    with pytest.raises(ProvenanceError, match="densities"):
        strong_error(
            simulate_ensemble(p, other, 8, 1 / 16, 0, kappa_brownian=1 / 32), fine
        )
