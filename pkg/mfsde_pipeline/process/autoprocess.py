import datetime
import logging
import pathlib
import platform
import time

import numpy as np
import pandas
import scipy

import mfsde_pipeline
from mfsde_pipeline import config
from mfsde_pipeline.analyses import stats, studies
from mfsde_pipeline.density import PiecewiseDensity
from mfsde_pipeline.fpsolve import solve_fp
from mfsde_pipeline.grid import Grid
from mfsde_pipeline.model import builtin_example, check_ellipticity, check_problem
from mfsde_pipeline.particle import ParticleConfig
from mfsde_pipeline.sde import simulate_ensemble
from mfsde_pipeline.utils import dumps, to_json

logger = logging.getLogger(__name__)

MANIFEST_KEYS = ("config", "seed", "versions", "outputs", "timing")


def setup_logging(out):
    # logger does not work without this somehow
    for handler in logging.root.handlers[:]:
        logging.root.removeHandler(handler)

    log_file = pathlib.Path(out) / "run.log"
    log_file.parent.mkdir(parents=True, exist_ok=True)
    log_file.touch(exist_ok=True)

    logging.basicConfig(
        format="%(asctime)s - %(message)s",
        handlers=[
            # write info into both the log file and console
            logging.FileHandler(log_file),
            logging.StreamHandler(),
        ],
        level=config["loglevel"],
    )
    return log_file


def versions():
    return {
        "mfsde_pipeline": mfsde_pipeline.__version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pandas.__version__,
    }


def cache_dir_for(cfg):
    return pathlib.Path(config["cache_dir"] or pathlib.Path(cfg.out) / "cache")


def _density(cfg, problem):
    if cfg.density_path is not None:
        field = dumps.read_density(cfg.density_path)
        logger.log(25, "Loaded density {}".format(cfg.density_path))
        return field
    g = Grid(d=problem.d, alpha=cfg.alpha, M=cfg.M, T=problem.T, N=cfg.N)
    return studies.cached_solve(
        problem,
        g,
        cache_dir_for(cfg),
        kernel_mode=cfg.kernel_mode,
        progress=cfg.progress,
    )


def _write_report(report, out, name):
    report.to_csv(out / "{}.csv".format(name))
    report.loglog_to_csv(out / "loglog_{}.csv".format(name))
    return ["{}.csv".format(name), "loglog_{}.csv".format(name)]


def run_fp_temporal(cfg, problem, out):
    report = studies.fp_temporal_study(
        problem,
        cfg.alpha,
        cfg.M,
        cfg.reference,
        cfg.ladder,
        epoch=cfg.error_epoch,
        cache_dir=cache_dir_for(cfg),
        workers=cfg.workers,
        kernel_mode=cfg.kernel_mode,
        progress=cfg.progress,
    )
    return _write_report(report, out, "fp_temporal")


def run_fp_spatial(cfg, problem, out):
    report = studies.fp_spatial_study(
        problem,
        cfg.alpha,
        cfg.N,
        cfg.reference,
        cfg.ladder,
        epoch=cfg.error_epoch,
        cache_dir=cache_dir_for(cfg),
        workers=cfg.workers,
        kernel_mode=cfg.kernel_mode,
        progress=cfg.progress,
    )
    return _write_report(report, out, "fp_spatial")


def run_em_converge(cfg, problem, out):
    pd_ = PiecewiseDensity(_density(cfg, problem))
    report = studies.em_strong_study(
        problem,
        pd_,
        cfg.paths,
        cfg.reference,
        cfg.ladder,
        cfg.seed,
        mode=cfg.mode,
        workers=cfg.workers,
        progress=cfg.progress,
    )
    return _write_report(report, out, "em_converge")


def run_moments(cfg, problem, out):
    field = _density(cfg, problem)
    particle_cfg = ParticleConfig(
        n_particles=cfg.particles,
        n_trials=cfg.trials,
        kappa=problem.T / cfg.particle_N,
        seed=cfg.seed,
    )
    table = stats.compare_methods(
        problem,
        field.grid,
        cfg.paths,
        particle_cfg,
        cfg.seed,
        kappa_sde=problem.T / cfg.sde_N,
        mode=cfg.mode,
        field=field,
        workers=cfg.workers,
        progress=cfg.progress,
    )
    table.to_csv(out / "moments.csv")
    return ["moments.csv"]


def _dump_names(cfg, stem, binary_suffix):
    names = []
    if cfg.dump_format in ("bin", "both"):
        names.append(stem + binary_suffix)
    if cfg.dump_format in ("csv", "both"):
        names.append(stem + ".csv")
    return names


def run_solve_fp(cfg, problem, out):
    g = Grid(d=problem.d, alpha=cfg.alpha, M=cfg.M, T=problem.T, N=cfg.N)
    field = solve_fp(
        problem,
        g,
        diagnostics=cfg.diagnostics,
        kernel_mode=cfg.kernel_mode,
        progress=cfg.progress,
    )
    names = _dump_names(cfg, "density", ".bin")
    for name in names:
        dumps.write_density(field, out / name)
    if cfg.diagnostics:
        dumps.write_diagnostics(field, out / "diagnostics.csv")
        names.append("diagnostics.csv")
    return names


def run_simulate(cfg, problem, out):
    pd_ = PiecewiseDensity(_density(cfg, problem))
    e = simulate_ensemble(
        problem,
        pd_,
        cfg.paths,
        problem.T / cfg.sde_N,
        cfg.seed,
        mode=cfg.mode,
        workers=cfg.workers,
        progress=cfg.progress,
    )
    names = _dump_names(cfg, "ensemble", ".npz")
    for name in names:
        dumps.write_ensemble(e, out / name)
    return names


STUDY_RUNNERS = {
    "fp-temporal": run_fp_temporal,
    "fp-spatial": run_fp_spatial,
    "em-converge": run_em_converge,
    "moments": run_moments,
    "solve-fp": run_solve_fp,
    "simulate": run_simulate,
}


def run(cfg):
    """
    Execute the study of a validated RunConfig and write its outputs and
    manifest.json into cfg.out.

    :returns: manifest dict
    :raises ProblemDefinitionError: the example fails its checks
    :raises NumericalFailure: a solve or simulation broke down
    """
    out = pathlib.Path(cfg.out)
    setup_logging(out)
    started = datetime.datetime.now()
    start = time.perf_counter()
    logger.log(25, "Running {} for example {}".format(cfg.study, cfg.example))

    problem = builtin_example(cfg.example)
    check_problem(problem, seed=cfg.seed, alpha=cfg.alpha)
    report = check_ellipticity(problem, seed=cfg.seed, alpha=cfg.alpha)
    logger.log(
        25,
        "Ellipticity of {}: gamma1 ~ {:.4g}, gamma2 ~ {:.4g}{}".format(
            problem.name,
            report.gamma1_est,
            report.gamma2_est,
            " (degenerate)" if report.degenerate else "",
        ),
    )

    outputs = STUDY_RUNNERS[cfg.study](cfg, problem, out)

    manifest = dict(
        config=cfg.to_dict(),
        seed=cfg.seed,
        versions=versions(),
        outputs=outputs,
        timing=dict(
            started=started.isoformat(),
            wall_time_s=time.perf_counter() - start,
        ),
    )
    with open(out / "manifest.json", "w") as f:
        f.write(to_json(manifest, indent=2))
    logger.log(
        25,
        "Finished {} in {:.1f} s, outputs: {}".format(
            cfg.study, manifest["timing"]["wall_time_s"], ", ".join(outputs)
        ),
    )
    return manifest
