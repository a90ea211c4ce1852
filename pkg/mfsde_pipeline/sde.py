"""
Euler-Maruyama for the SDE whose law is replaced by the numerical density

    X^{n+1} = X^n + kappa f(t_n, X^n) + kappa int K(t_n, X^n, y) p(t_n, y) dy
              + sigma(t_n, X^n) dW_n

Every path owns a stream id. The pair (seed, stream) seeds a Philox
generator for its initial draw and another for its Brownian increments, so
results do not depend on batching or on the number of workers.
"""
import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from tqdm import tqdm

from mfsde_pipeline import NonFiniteStateError, ProvenanceError, config
from mfsde_pipeline.density import InteractionField, interaction_on_level

logger = logging.getLogger(__name__)

RECORD_MODES = ("all", "final")

X0_STREAM = 0
BROWNIAN_STREAM = 1


def stream_generator(seed, stream, purpose):
    """Counter-based generator for one (seed, stream, purpose) triple"""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))


def _steps(T, kappa, name="kappa"):
    if not kappa > 0:
        raise ValueError("{} must be positive".format(name))
    N = int(round(T / kappa))
    if N < 1 or abs(N * kappa - T) > 1e-9 * T:
        raise ValueError("{}={} does not divide T={}".format(name, kappa, T))
    return N


def _power_of_two(ratio):
    ratio = Fraction(ratio)
    q = ratio if ratio >= 1 else 1 / ratio
    return q.denominator == 1 and q.numerator & (q.numerator - 1) == 0


@dataclass(frozen=True)
class BrownianPath:
    m: int
    kappa: float
    seed: int
    stream: int
    increments: np.ndarray = field(repr=False)

    @property
    def N(self):
        return self.increments.shape[0]


def brownian_path(seed, stream, N, m, kappa):
    """N independent N(0, kappa I_m) increments for (seed, stream)"""
    if N < 1:
        raise ValueError("N must be >= 1")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    rng = stream_generator(seed, stream, BROWNIAN_STREAM)
    increments = np.sqrt(kappa) * rng.standard_normal((N, m))
    return BrownianPath(
        m=m, kappa=kappa, seed=seed, stream=stream, increments=increments
    )


def coarsen(path, r):
    """Sum r consecutive increments"""
    if r < 1 or path.N % r:
        raise ValueError("cannot coarsen {} increments by {}".format(path.N, r))
    increments = path.increments.reshape(path.N // r, r, path.m).sum(axis=1)
    return BrownianPath(
        m=path.m,
        kappa=path.kappa * r,
        seed=path.seed,
        stream=path.stream,
        increments=increments,
    )


def density_provenance(pd):
    if pd is None:
        return None
    g = pd.grid
    digest = hashlib.sha1(np.ascontiguousarray(pd.values).tobytes()).hexdigest()
    return dict(
        description=pd.field.description,
        d=g.d,
        alpha=g.alpha,
        M=g.M,
        T=g.T,
        N=g.N,
        digest=digest[:16],
    )


@dataclass(frozen=True)
class Ensemble:
    problem: str
    T: float
    N: int
    kappa: float
    levels: np.ndarray = field(repr=False)
    paths: np.ndarray = field(repr=False)
    x0: np.ndarray = field(repr=False)
    seed: int = 0
    streams: np.ndarray = field(default=None, repr=False)
    kappa_brownian: Optional[float] = None
    density: Optional[dict] = None
    method: str = "trajectories"

    @property
    def times(self):
        return self.levels * self.kappa

    @property
    def n_paths(self):
        return self.paths.shape[0]

    @property
    def d(self):
        return self.paths.shape[-1]

    def at(self, n):
        """(P, d) states at step n"""
        idx = np.flatnonzero(self.levels == n)
        if not len(idx):
            raise ValueError("step {} was not recorded".format(n))
        return self.paths[:, idx[0]]

    @property
    def final(self):
        return self.paths[:, -1]


def em_step(
    problem, G, state, n, t, dW, kappa, level=None, mode="interpolate", paths=None
):
    """
    One Euler-Maruyama step for a batch of states.

    Args:
        problem: Problem
        G: None for no coupling, an InteractionField read at density level
            `level` (default: floor level of t), or precomputed (B, d)
            interaction values
        state: (B, d) or (d,)
        n: step index, for error reports
        t: t_n
        dW: (B, m) or (m,) Brownian increments
        kappa: step size
        mode: 'exact' or 'interpolate', see density.interaction_at
        paths: path ids of the batch rows, for error reports

    Raises:
        NonFiniteStateError: a new state is nan or inf
    """
    state = np.asarray(state, dtype=float)
    drift = np.asarray(problem.f(t, state), dtype=float).reshape(state.shape)
    if G is None:
        inter = np.zeros_like(state)
    elif isinstance(G, InteractionField):
        lvl = G.pd.level_index(t) if level is None else level
        inter = interaction_on_level(G, lvl, state, mode=mode)
    else:
        inter = np.asarray(G, dtype=float).reshape(state.shape)
    s = np.asarray(problem.sigma(t, state), dtype=float)
    noise = np.einsum("...im,...m->...i", s, np.asarray(dW, dtype=float))
    new = state + kappa * drift + kappa * inter + noise

    finite = np.isfinite(new)
    if not finite.all():
        bad = np.flatnonzero(~finite.reshape(-1, state.shape[-1]).all(axis=-1))[0]
        path = int(paths[bad]) if paths is not None else int(bad)
        raise NonFiniteStateError(n, path)
    return new


def _increments(seed, stream, N_base, m, kappa_base, r):
    path = brownian_path(seed, stream, N_base, m, kappa_base)
    return coarsen(path, r).increments if r > 1 else path.increments


def _initial_states(problem, seed, streams):
    return np.stack(
        [
            np.asarray(
                problem.sample_x0(stream_generator(seed, s, X0_STREAM), 1), dtype=float
            ).reshape(problem.d)
            for s in streams
        ]
    )


def simulate_ensemble(
    problem,
    pd,
    n_paths,
    kappa,
    seed,
    mode="interpolate",
    kappa_brownian=None,
    record="all",
    batch_size=None,
    workers=1,
    streams=None,
    G=None,
    progress=False,
):
    """
    Euler-Maruyama ensemble of the density-coupled SDE.

    Args:
        problem: Problem
        pd: PiecewiseDensity, or None to drop the interaction term
        n_paths: number of paths P
        kappa: SDE step, dividing T
        seed: 64-bit seed
        mode: 'interpolate' (default) or 'exact' interaction evaluation
        kappa_brownian: base step the Brownian increments are drawn on
            (default kappa); must refine kappa by a power of two. Ensembles
            sharing seed and base step are pathwise coupled.
        record: 'all' levels or only 'final' (levels 0 and N)
        batch_size: paths per batch, default config['sde.batch_size']
        workers: threads running batches
        streams: stream ids, default 0..P-1
        G: InteractionField to reuse for pd

    Returns:
        Ensemble

    Raises:
        ValueError: step sizes are not power-of-two refinements
        NonFiniteStateError: a state became nan or inf
    """
    if record not in RECORD_MODES:
        raise ValueError("record must be one of {}".format(RECORD_MODES))
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    N = _steps(problem.T, kappa)
    kappa_b = kappa if kappa_brownian is None else kappa_brownian
    N_base = _steps(problem.T, kappa_b, name="kappa_brownian")
    if N_base % N or not _power_of_two(Fraction(N_base, N)):
        raise ValueError(
            "kappa_brownian={} must refine kappa={} by a power of two".format(
                kappa_b, kappa
            )
        )
    r = N_base // N

    if pd is not None:
        N_d = pd.grid.N
        if abs(pd.grid.T - problem.T) > 1e-12 * problem.T:
            raise ValueError("density horizon differs from the problem horizon")
        if not _power_of_two(Fraction(N_d, N)):
            raise ValueError(
                "SDE steps N={} and density steps N={} differ by a factor "
                "that is not a power of two".format(N, N_d)
            )
        # floor(t_n / kappa_density) in integers
        level_of = [n * N_d // N for n in range(N)]
        if G is None:
            G = InteractionField(pd, problem)
        if mode == "interpolate":
            G.precompute(sorted(set(level_of)))
    else:
        level_of = [None] * N
        G = None

    streams = np.arange(n_paths) if streams is None else np.asarray(streams)
    if len(streams) != n_paths:
        raise ValueError("need one stream id per path")
    levels = np.arange(N + 1) if record == "all" else np.array([0, N])
    batch_size = int(batch_size or config["sde.batch_size"])
    batches = [
        np.arange(start, min(start + batch_size, n_paths))
        for start in range(0, n_paths, batch_size)
    ]

    def run_batch(rows):
        ids = streams[rows]
        x0 = _initial_states(problem, seed, ids)
        dW = np.stack(
            [_increments(seed, s, N_base, problem.m, kappa_b, r) for s in ids]
        )
        out = np.empty((len(rows), len(levels), problem.d))
        out[:, 0] = x0
        state = x0
        for n in range(N):
            state = em_step(
                problem,
                G,
                state,
                n,
                n * kappa,
                dW[:, n],
                kappa,
                level=level_of[n],
                mode=mode,
                paths=rows,
            )
            if record == "all":
                out[:, n + 1] = state
        out[:, -1] = state
        return x0, out

    desc = "{} kappa={:g}".format(problem.name, kappa)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                tqdm(
                    pool.map(run_batch, batches),
                    total=len(batches),
                    desc=desc,
                    disable=not progress,
                )
            )
    else:
        batches = tqdm(batches, desc=desc, disable=not progress)
        results = [run_batch(rows) for rows in batches]

    logger.log(
        25,
        "Simulated {} paths of {} with kappa={:g} ({} batches)".format(
            n_paths, problem.name, kappa, len(batches)
        ),
    )
    return Ensemble(
        problem=problem.name,
        T=problem.T,
        N=N,
        kappa=kappa,
        levels=levels,
        paths=np.concatenate([res[1] for res in results]),
        x0=np.concatenate([res[0] for res in results]),
        seed=int(seed),
        streams=streams,
        kappa_brownian=kappa_b,
        density=density_provenance(pd),
        method="trajectories",
    )


def check_coupling(coarse, fine):
    if coarse.seed != fine.seed:
        raise ProvenanceError("seeds differ: {} vs {}".format(coarse.seed, fine.seed))
    if not np.array_equal(coarse.streams, fine.streams):
        raise ProvenanceError("ensembles use different stream ids")
    if coarse.density != fine.density:
        raise ProvenanceError(
            "ensembles were driven by different densities: {} vs {}".format(
                coarse.density, fine.density
            )
        )
    if coarse.kappa_brownian != fine.kappa_brownian:
        raise ProvenanceError(
            "Brownian increments were drawn on different base steps ({} vs {}), "
            "paths are not coupled".format(coarse.kappa_brownian, fine.kappa_brownian)
        )
    if fine.N % coarse.N or not _power_of_two(Fraction(fine.N, coarse.N)):
        raise ProvenanceError(
            "fine grid N={} does not refine coarse grid N={} by a power of "
            "two".format(fine.N, coarse.N)
        )
    if not np.array_equal(coarse.x0, fine.x0):
        raise ProvenanceError("initial draws differ")


def strong_error(coarse, fine):
    """
    Root-mean-square endpoint difference sqrt(mean |X_coarse(T) - X_fine(T)|^2)
    of two pathwise coupled ensembles.

    Raises:
        ProvenanceError: the ensembles do not share seed, streams, density,
            Brownian base step and initial draws, or the time grids are not
            nested by a power of two
    """
    check_coupling(coarse, fine)
    diff = coarse.final - fine.final
    return float(np.sqrt(np.mean(np.sum(diff**2, axis=-1))))
