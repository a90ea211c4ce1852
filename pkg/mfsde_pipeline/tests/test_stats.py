import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mfsde_pipeline.analyses.stats import (
    ConvergenceReport,
    MomentTable,
    compare_methods,
    convergence_report,
    estimate_orders,
    moment_columns,
    restrict,
    sample_moments,
)
from mfsde_pipeline.grid import Grid
from mfsde_pipeline.particle import ParticleConfig
from mfsde_pipeline.sde import Ensemble
from mfsde_pipeline.tests.problem_utils import (
    gaussian_p0,
    make_problem,
    point_sampler,
)

TABLE_ERRORS = [4.3019e-06, 1.0036e-05, 2.1495e-05, 4.4383e-05]
TABLE_KAPPAS = [2.0**-12, 2.0**-11, 2.0**-10, 2.0**-9]


def ensemble_of(final):
    final = np.asarray(final, dtype=float)
    paths = np.stack([final, final], axis=1)
    return Ensemble(
        problem="test",
        T=1.0,
        N=1,
        kappa=1.0,
        levels=np.array([0, 1]),
        paths=paths,
        x0=paths[:, 0],
    )


# ---- orders ----


def test_estimate_orders():
    kappa = 2.0**-10
    assert_allclose(estimate_orders([4e-6, 8e-6], [kappa, 2 * kappa]), [1.0])
    assert_allclose(estimate_orders([1.0, 4.0], [0.25, 0.5]), [2.0])


def test_estimate_orders_of_tabulated_errors():
    orders = estimate_orders(TABLE_ERRORS, TABLE_KAPPAS)
    assert_allclose(orders, [1.2221, 1.0988, 1.0460], atol=2e-4)


def test_estimate_orders_is_scale_invariant():
    orders = estimate_orders(TABLE_ERRORS, TABLE_KAPPAS)
    scaled = estimate_orders(1e3 * np.array(TABLE_ERRORS), TABLE_KAPPAS)
    assert_allclose(scaled, orders, rtol=1e-12)


@pytest.mark.parametrize(
    "errors,resolutions",
    [([1.0, 0.0], [1.0, 2.0]), ([1.0, -2.0], [1.0, 2.0]), ([1.0, 2.0], [1.0, 3.0])],
)
def test_estimate_orders_rejects(errors, resolutions):
    with pytest.raises(ValueError):
        estimate_orders(errors, resolutions)


def test_convergence_report_sorts_and_writes(tmp_path):
    report = convergence_report(
        "temporal", TABLE_KAPPAS[::-1], TABLE_ERRORS[::-1], reference="tab"
    )
    assert report.resolutions == TABLE_KAPPAS
    frame = report.to_frame()
    assert list(frame.columns) == ["resolution", "error", "order"]
    assert np.isnan(frame["order"][0])
    assert_allclose(frame["order"][1], 1.2221, atol=2e-4)

    report.to_csv(tmp_path / "report.csv")
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "resolution,error,order"
    assert lines[1].endswith(",")
    assert len(lines) == 5

    report.loglog_to_csv(tmp_path / "loglog.csv")
    lines = (tmp_path / "loglog.csv").read_text().splitlines()
    assert lines[0] == "log2(resolution),log2(error)"
    assert lines[1].startswith("-12,")


def test_convergence_report_axis():
    with pytest.raises(ValueError):
        ConvergenceReport(axis="diagonal", resolutions=[1.0], errors=[1.0])


# ---- restriction ----


def test_restrict_identity():
    g = Grid(d=2, alpha=1.0, M=4, T=1.0, N=1)
    level = np.random.default_rng(0).standard_normal(g.n_nodes)
    assert_array_equal(restrict(level, g, g), level)


def test_restrict_keeps_coarse_nodes():
    fine = Grid(d=2, alpha=1.0, M=8, T=1.0, N=1)
    coarse = Grid(d=2, alpha=1.0, M=2, T=1.0, N=1)
    level = fine.nodes[:, 0] + 10 * fine.nodes[:, 1]
    assert_allclose(
        restrict(level, fine, coarse), coarse.nodes[:, 0] + 10 * coarse.nodes[:, 1]
    )
    levels = np.stack([level, 2 * level])
    assert restrict(levels, fine, coarse).shape == (2, coarse.n_nodes)


def test_restrict_matches_index_oracle():
    fine = Grid(d=2, alpha=1.0, M=6, T=1.0, N=1)
    coarse = Grid(d=2, alpha=1.0, M=3, T=1.0, N=1)
    level = np.random.default_rng(1).standard_normal(fine.n_nodes)
    expected = [level[fine.flat_index(2 * k)] for k in coarse.indices]
    assert_array_equal(restrict(level, fine, coarse), expected)


def test_restrict_rejects_non_nested_grids():
    with pytest.raises(ValueError, match="nested"):
        restrict(
            np.zeros(13),
            Grid(d=1, alpha=1.0, M=6, T=1.0, N=1),
            Grid(d=1, alpha=1.0, M=4, T=1.0, N=1),
        )


# ---- moments ----


def test_sample_moments():
    mean, cov, se = sample_moments(ensemble_of([[0.0], [2.0]]))
    assert_allclose(mean, [1.0])
    assert_allclose(cov, [[2.0]])
    assert se["mean"].shape == (1,)

    mean, cov, _ = sample_moments(ensemble_of(np.full((10, 2), 3.0)))
    assert_allclose(mean, [3.0, 3.0])
    assert_array_equal(cov, 0.0)

    X = np.random.default_rng(2).standard_normal((500, 3))
    mean, cov, se = sample_moments(ensemble_of(X))
    assert_allclose(cov, np.cov(X.T))
    assert np.all(np.linalg.eigvalsh(cov) >= 0)
    assert se["covariance"].shape == (3, 3)


def test_sample_moments_need_two_paths():
    with pytest.raises(ValueError):
        sample_moments(ensemble_of([[1.0]]))


def test_moment_columns():
    assert moment_columns(1) == ["E_X", "V_X"]
    assert moment_columns(2) == ["E_X1", "E_X2", "V_X1", "V_X2", "V_X1X2"]


def test_moment_table(tmp_path):
    table = MomentTable(d=2)
    table.add("trajectories", [0.1, 0.2], [[1.0, 0.5], [0.5, 2.0]])
    table.add("pdf", [0.0, 0.0], np.eye(2))
    frame = table.to_frame()
    assert list(frame.index) == ["pdf", "trajectories"]
    assert_allclose(frame.loc["trajectories"], [0.1, 0.2, 1.0, 2.0, 0.5])
    table.to_csv(tmp_path / "moments.csv")
    header = (tmp_path / "moments.csv").read_text().splitlines()[0]
    assert header == "method,E_X1,E_X2,V_X1,V_X2,V_X1X2"
    with pytest.raises(ValueError):
        table.add("histogram", [0.0, 0.0], np.eye(2))
    with pytest.raises(ValueError):
        table.add("pdf", [np.nan, 0.0], np.eye(2))


def test_compare_methods_on_a_resting_point():
    c, width = 0.25, 0.02
    p = make_problem(
        d=1,
        p0=gaussian_p0(c, width**2),
        sample_x0=point_sampler(c),
        kernel_time_independent=True,
    )
    g = Grid(d=1, alpha=1.0, M=64, T=1.0, N=8)
    table = compare_methods(
        p, g, 20, ParticleConfig(n_particles=5, n_trials=2, kappa=1 / 8), seed=0
    )
    frame = table.to_frame()
    assert list(frame.index) == ["pdf", "trajectories", "particle"]
    assert_allclose(frame["E_X"], c, atol=1e-3)
    assert np.all(frame["V_X"] <= 1e-3)
    assert_array_equal(frame.loc[["trajectories", "particle"], "V_X"], 0.0)
