import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mfsde_pipeline.analyses.stats import compare_methods, sample_moments
from mfsde_pipeline.grid import Grid
from mfsde_pipeline.model import builtin_example
from mfsde_pipeline.particle import (
    ParticleConfig,
    empirical_interaction,
    simulate_particles,
)
from mfsde_pipeline.sde import simulate_ensemble
from mfsde_pipeline.tests.problem_utils import make_problem, zero_kernel


def identity_kernel(t, x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return np.broadcast_to(y, np.broadcast_shapes(x.shape, y.shape)).copy()


def test_particle_config_validation():
    with pytest.raises(ValueError):
        ParticleConfig(n_particles=0, n_trials=1, kappa=0.1)
    with pytest.raises(ValueError):
        ParticleConfig(n_particles=3, n_trials=1, kappa=0.1, streams=(0, 1, 1))
    cfg = ParticleConfig(n_particles=3, n_trials=2, kappa=0.1, streams=[2, 0, 1])
    assert cfg.streams == (2, 0, 1)


def test_empirical_interaction():
    X = np.array([[1.0], [2.0], [6.0]])
    assert_allclose(empirical_interaction(make_problem(K=identity_kernel), 0.0, X), 3.0)


def test_target_independent_interaction_matches_pairwise_sum():
    p = builtin_example(2)
    X = np.random.default_rng(5).standard_normal((40, 2))
    pairwise = empirical_interaction(
        dataclasses.replace(p, kernel_target_independent=False), 0.0, X
    )
    assert_allclose(empirical_interaction(p, 0.0, X), pairwise, rtol=1e-13)


def test_zero_kernel_matches_sde_paths():
    p = dataclasses.replace(builtin_example(1), K=zero_kernel)
    cfg = ParticleConfig(n_particles=50, n_trials=1, kappa=1 / 32, seed=3)
    particles = simulate_particles(p, cfg)
    paths = simulate_ensemble(p, None, 50, 1 / 32, 3, record="final")
    assert particles.method == "particle"
    assert_array_equal(particles.paths, paths.paths)


def test_single_particle_feels_itself():
    kappa = 1 / 4
    p = make_problem(d=1, K=identity_kernel)
    e = simulate_particles(
        p, ParticleConfig(n_particles=1, n_trials=3, kappa=kappa), record="all"
    )
    assert e.paths.shape == (3, 5, 1)
    assert_allclose(e.paths[:, 1], e.x0 * (1 + kappa))
    assert_allclose(e.final, e.x0 * (1 + kappa) ** 4)


def test_trials_are_pooled_trial_major():
    p = builtin_example(1)
    cfg = ParticleConfig(n_particles=4, n_trials=3, kappa=1 / 8, seed=1)
    e = simulate_particles(p, cfg, workers=2)
    assert e.n_paths == 12
    assert_array_equal(e.streams, np.arange(12))
    assert_array_equal(simulate_particles(p, cfg).paths, e.paths)


def test_relabelling_particles_permutes_paths():
    p = builtin_example(2)
    perm = (3, 0, 4, 1, 2)
    base = simulate_particles(p, ParticleConfig(5, 2, 1 / 8, seed=9), record="all")
    relabelled = simulate_particles(
        p, ParticleConfig(5, 2, 1 / 8, seed=9, streams=perm), record="all"
    )
    index = np.concatenate([trial * 5 + np.array(perm) for trial in range(2)])
    assert_allclose(relabelled.paths, base.paths[index], rtol=1e-12, atol=1e-14)
    mean_a, cov_a, _ = sample_moments(base)
    mean_b, cov_b, _ = sample_moments(relabelled)
    assert_allclose(mean_a, mean_b, rtol=1e-12, atol=1e-14)
    assert_allclose(cov_a, cov_b, rtol=1e-12, atol=1e-14)


def test_zero_kernel_particles_agree_with_density_moments():
    p = dataclasses.replace(builtin_example(1), K=zero_kernel)
    g = Grid(d=1, alpha=6.0, M=64, T=1.0, N=32)
    cfg = ParticleConfig(n_particles=200, n_trials=5, kappa=1 / 32, seed=1)
    table = compare_methods(p, g, 1000, cfg, seed=2)
    se = table.standard_errors["particle"]
    mean_gap = np.abs(table.means["particle"] - table.means["pdf"])
    cov_gap = np.abs(table.covariances["particle"] - table.covariances["pdf"])
    assert np.all(mean_gap <= 3 * se["mean"]), (mean_gap, se["mean"])
    assert np.all(cov_gap <= 3 * se["covariance"]), (cov_gap, se["covariance"])
