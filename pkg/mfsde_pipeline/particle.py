"""
Interacting-particle baseline: the law in the drift is replaced by the
empirical measure of N_p particles,

    X_i^{n+1} = X_i^n + kappa f(t_n, X_i^n) + kappa / N_p sum_j K(t_n, X_i^n, X_j^n)
                + sigma(t_n, X_i^n) dW_i

Particle i of trial r draws from stream r * N_p + streams[i], the same
streams an SDE ensemble uses for its paths.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from tqdm import tqdm

from mfsde_pipeline.sde import (
    RECORD_MODES,
    Ensemble,
    _increments,
    _initial_states,
    _steps,
    em_step,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParticleConfig:
    n_particles: int
    n_trials: int
    kappa: float
    seed: int = 0
    streams: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.streams is not None:
            if sorted(self.streams) != list(range(self.n_particles)):
                raise ValueError("streams must be a permutation of 0..n_particles-1")
            object.__setattr__(self, "streams", tuple(int(s) for s in self.streams))


def empirical_interaction(problem, t, X):
    """(1/N_p) sum_j K(t, X_i, X_j) for all i, self term included"""
    if problem.kernel_target_independent:
        K = np.asarray(problem.K(t, X[:1], X), dtype=float)
        return np.broadcast_to(K.mean(axis=0), X.shape).copy()
    K = np.asarray(problem.K(t, X[:, None, :], X[None, :, :]), dtype=float)
    return K.mean(axis=1)


def simulate_particles(problem, cfg, record="final", workers=1, progress=False):
    """
    Run cfg.n_trials independent particle systems and pool their particles.

    :returns: Ensemble of n_trials * n_particles paths, trial-major
    """
    if record not in RECORD_MODES:
        raise ValueError("record must be one of {}".format(RECORD_MODES))
    N = _steps(problem.T, cfg.kappa)
    kappa = cfg.kappa
    local = np.arange(cfg.n_particles) if cfg.streams is None else np.array(cfg.streams)
    levels = np.arange(N + 1) if record == "all" else np.array([0, N])

    def run_trial(trial):
        ids = trial * cfg.n_particles + local
        rows = trial * cfg.n_particles + np.arange(cfg.n_particles)
        x0 = _initial_states(problem, cfg.seed, ids)
        dW = np.stack(
            [_increments(cfg.seed, s, N, problem.m, kappa, 1) for s in ids]
        )
        out = np.empty((cfg.n_particles, len(levels), problem.d))
        out[:, 0] = x0
        X = x0
        for n in range(N):
            t = n * kappa
            X = em_step(
                problem,
                empirical_interaction(problem, t, X),
                X,
                n,
                t,
                dW[:, n],
                kappa,
                paths=rows,
            )
            if record == "all":
                out[:, n + 1] = X
        out[:, -1] = X
        return ids, x0, out

    trials = range(cfg.n_trials)
    desc = "{} particles".format(problem.name)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                tqdm(
                    pool.map(run_trial, trials),
                    total=cfg.n_trials,
                    desc=desc,
                    disable=not progress,
                )
            )
    else:
        results = [
            run_trial(r) for r in tqdm(trials, desc=desc, disable=not progress)
        ]

    logger.log(
        25,
        "Simulated {} trials of {} particles for {}".format(
            cfg.n_trials, cfg.n_particles, problem.name
        ),
    )
    return Ensemble(
        problem=problem.name,
        T=problem.T,
        N=N,
        kappa=kappa,
        levels=levels,
        paths=np.concatenate([res[2] for res in results]),
        x0=np.concatenate([res[1] for res in results]),
        seed=int(cfg.seed),
        streams=np.concatenate([res[0] for res in results]),
        kappa_brownian=kappa,
        density=None,
        method="particle",
    )
