"""
Convergence studies: each varies one resolution against a fixed fine
reference and reports errors with estimated orders.
"""
import logging
import pathlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from tqdm import tqdm

from mfsde_pipeline.analyses.stats import convergence_report, restrict
from mfsde_pipeline.fpsolve import discrete_l2_error, solve_fp
from mfsde_pipeline.grid import Grid
from mfsde_pipeline.sde import simulate_ensemble, strong_error
from mfsde_pipeline.utils import dumps

logger = logging.getLogger(__name__)

ERROR_EPOCHS = ("final", "max")


def _map(fn, items, workers, desc, progress):
    items = list(items)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(
                tqdm(
                    pool.map(fn, items),
                    total=len(items),
                    desc=desc,
                    disable=not progress,
                )
            )
    return [fn(item) for item in tqdm(items, desc=desc, disable=not progress)]


def reference_path(cache_dir, problem, g, kernel_mode="exact"):
    return pathlib.Path(cache_dir) / "{}_{}_N{}_M{}_alpha{:g}.bin".format(
        problem.name, kernel_mode, g.N, g.M, g.alpha
    )


def cached_solve(problem, g, cache_dir=None, **kwargs):
    """
    solve_fp, reading and writing the binary dump in cache_dir when given
    """
    if cache_dir is None:
        return solve_fp(problem, g, **kwargs)
    filepath = reference_path(
        cache_dir, problem, g, kwargs.get("kernel_mode", "exact")
    )
    if filepath.exists():
        field = dumps.read_density(filepath)
        if field.grid == g:
            logger.log(25, "Reusing cached reference {}".format(filepath))
            return field
        logger.warning(
            "cached reference %s does not match %s, recomputing", filepath, g
        )
    field = solve_fp(problem, g, **kwargs)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    dumps.write_density(field, filepath)
    return field


def _epoch_error(levels_a, levels_b, g, epoch):
    if epoch == "final":
        return discrete_l2_error(levels_a[-1], levels_b[-1], g)
    return max(discrete_l2_error(a, b, g) for a, b in zip(levels_a, levels_b))


def _check_epoch(epoch):
    if epoch not in ERROR_EPOCHS:
        raise ValueError("error epoch must be one of {}".format(ERROR_EPOCHS))


def fp_temporal_study(
    problem,
    alpha,
    M,
    N_ref,
    ladder,
    epoch="final",
    cache_dir=None,
    workers=1,
    kernel_mode="exact",
    progress=False,
):
    """
    Errors of solutions with N in ladder time steps against the N_ref
    solution, all on the same spatial grid.

    Returns:
        ConvergenceReport over kappa, finest first
    """
    _check_epoch(epoch)
    g_ref = Grid(d=problem.d, alpha=alpha, M=M, T=problem.T, N=N_ref)
    for N in ladder:
        if N_ref % N:
            raise ValueError("N={} does not divide the reference N={}".format(N, N_ref))
    ref = cached_solve(problem, g_ref, cache_dir, kernel_mode=kernel_mode)

    def error(N):
        g = g_ref.with_resolution(N=N)
        field = solve_fp(problem, g, kernel_mode=kernel_mode)
        ref_levels = ref.values[:: N_ref // N]
        return _epoch_error(field.values, ref_levels, g, epoch)

    errors = _map(error, ladder, workers, "fp-temporal", progress)
    report = convergence_report(
        "temporal",
        [problem.T / N for N in ladder],
        errors,
        reference="{} alpha={:g} M={} N={}".format(problem.name, alpha, M, N_ref),
    )
    logger.log(25, "Temporal FP study:\n{}".format(report.to_frame()))
    return report


def fp_spatial_study(
    problem,
    alpha,
    N,
    M_ref,
    ladder,
    epoch="final",
    cache_dir=None,
    workers=1,
    kernel_mode="exact",
    progress=False,
):
    """
    Errors of solutions with M in ladder against the M_ref solution restricted
    onto each coarse grid, all with N time steps.

    Returns:
        ConvergenceReport over h, finest first
    """
    _check_epoch(epoch)
    g_ref = Grid(d=problem.d, alpha=alpha, M=M_ref, T=problem.T, N=N)
    for M in ladder:
        if M_ref % M:
            raise ValueError("M={} does not divide the reference M={}".format(M, M_ref))
    ref = cached_solve(problem, g_ref, cache_dir, kernel_mode=kernel_mode)

    def error(M):
        g = g_ref.with_resolution(M=M)
        field = solve_fp(problem, g, kernel_mode=kernel_mode)
        ref_levels = restrict(ref.values, g_ref, g)
        return _epoch_error(field.values, ref_levels, g, epoch)

    errors = _map(error, ladder, workers, "fp-spatial", progress)
    report = convergence_report(
        "spatial",
        [alpha / M for M in ladder],
        errors,
        reference="{} alpha={:g} M={} N={}".format(problem.name, alpha, M_ref, N),
    )
    logger.log(25, "Spatial FP study:\n{}".format(report.to_frame()))
    return report


def em_strong_study(
    problem,
    pd,
    n_paths,
    N_ref,
    ladder,
    seed,
    mode="interpolate",
    workers=1,
    progress=False,
):
    """
    Strong errors of Euler-Maruyama with N in ladder steps against N_ref
    steps, every run driven by the same Brownian increments drawn at T / N_ref.

    Returns:
        ConvergenceReport over kappa, finest first
    """
    kappa_ref = problem.T / N_ref
    fine = simulate_ensemble(
        problem,
        pd,
        n_paths,
        kappa_ref,
        seed,
        mode=mode,
        kappa_brownian=kappa_ref,
        record="final",
        workers=workers,
        progress=progress,
    )
    errors = []
    for N in tqdm(ladder, desc="em-converge", disable=not progress):
        coarse = simulate_ensemble(
            problem,
            pd,
            n_paths,
            problem.T / N,
            seed,
            mode=mode,
            kappa_brownian=kappa_ref,
            record="final",
            workers=workers,
        )
        errors.append(strong_error(coarse, fine))
    report = convergence_report(
        "temporal",
        [problem.T / N for N in ladder],
        errors,
        reference="{} EM N={} P={}".format(problem.name, N_ref, n_paths),
    )
    logger.log(25, "Euler-Maruyama strong errors:\n{}".format(report.to_frame()))
    return report
