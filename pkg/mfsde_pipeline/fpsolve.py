"""
Explicit-implicit finite-difference solver for the truncated nonlinear
Fokker-Planck equation

    dp/dt = -sum_i d/dx_i [(f_i + int K_i p dy) p] + 1/2 sum_ij d2/dx_i dx_j [a_ij p]

on (-alpha, alpha)^d with p = 0 on the boundary. Advection, including the
kernel sum, is explicit at level n; diffusion is implicit at level n + 1, so
each step is a single sparse linear solve

    (I - kappa B(t_{n+1})) p^{n+1} = p^n + kappa drift^n.
"""
import logging
from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.signal import fftconvolve
from tqdm import tqdm

from mfsde_pipeline import config, linalg
from mfsde_pipeline.grid import symmetric_sum
from mfsde_pipeline.model import diffusion_matrix

logger = logging.getLogger(__name__)

KERNEL_MODES = ("exact", "convolution")

POSITIVITY_TOLERANCE = 0.01
MASS_DRIFT_TOLERANCE = 0.05


@dataclass(frozen=True)
class StepDiagnostics:
    n: int
    mass: float
    min_value: float
    max_value: float
    solver_residual: float


@dataclass(frozen=True)
class DensityField:
    grid: object
    values: np.ndarray = field(repr=False)
    diagnostics: Optional[Tuple[StepDiagnostics, ...]] = field(
        default=None, repr=False
    )
    description: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.N + 1, self.grid.n_nodes):
            raise ValueError(
                "values must have shape {}, got {}".format(
                    (self.grid.N + 1, self.grid.n_nodes), values.shape
                )
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def level(self, n):
        return self.values[n]


def level_mass(values, g):
    return float(np.sum(values) * g.cell_volume)


class KernelQuadrature:
    """
    Node-point quadrature S_i(t, x) = sum_s K_i(t, x, x^s) p^s h^d.

    exact: pairwise sum, node s paired with node -s before accumulating.
        For a time-independent kernel the (targets, nodes, d) kernel matrix
        over grid nodes is cached if it fits config['kernel.cache_max_bytes'],
        otherwise targets are processed in blocks of config['kernel.chunk_rows'].
        A kernel flagged target-independent is summed once and broadcast.
    convolution: FFT convolution on the node lattice, for kernels flagged
        translation-invariant, K(t, x, y) = K(t, x - y, 0).
    """

    def __init__(self, problem, g, mode="exact"):
        if mode not in KERNEL_MODES:
            raise ValueError("kernel mode must be one of {}".format(KERNEL_MODES))
        if mode == "convolution" and not problem.kernel_translation_invariant:
            raise ValueError(
                "convolution mode needs a kernel flagged translation-invariant"
            )
        self.problem = problem
        self.grid = g
        self.mode = mode
        self._matrix = None
        self._offset_kernel = None

    def _block(self, t, targets, p):
        K = np.asarray(
            self.problem.K(t, targets[:, None, :], self.grid.nodes[None, :, :]),
            dtype=float,
        )
        return symmetric_sum(K * p[None, :, None], axis=1)

    def _cached_matrix(self):
        if self._matrix is None:
            n, d = self.grid.n_nodes, self.grid.d
            if n * n * d * 8 > config["kernel.cache_max_bytes"]:
                return None
            nodes = self.grid.nodes
            self._matrix = np.asarray(
                self.problem.K(0.0, nodes[:, None, :], nodes[None, :, :]),
                dtype=float,
            )
            self._matrix = np.broadcast_to(self._matrix, (n, n, d))
        return self._matrix

    def _convolution(self, t, p):
        g = self.grid
        if self._offset_kernel is None or not self.problem.kernel_time_independent:
            offsets = np.arange(-2 * g.M, 2 * g.M + 1) * g.h
            mesh = np.stack(np.meshgrid(*[offsets] * g.d, indexing="ij"), axis=-1)
            kern = np.asarray(
                self.problem.K(t, mesh, np.zeros(g.d)), dtype=float
            )
            self._offset_kernel = np.broadcast_to(kern, mesh.shape)
        window = tuple(slice(2 * g.M, 4 * g.M + 1) for _ in range(g.d))
        grid_p = p.reshape(g.shape)
        S = np.stack(
            [
                fftconvolve(grid_p, self._offset_kernel[..., i], mode="full")[window]
                for i in range(g.d)
            ],
            axis=-1,
        )
        return S.reshape(-1, g.d) * g.cell_volume

    def __call__(self, p_level, t, targets=None):
        """
        :param p_level: (n_nodes,) node values
        :param targets: (n_targets, d) positions, defaults to the grid nodes
        :returns: (n_targets, d)
        """
        g = self.grid
        p = np.asarray(p_level, dtype=float)
        if p.shape != (g.n_nodes,):
            raise ValueError(
                "level must have {} entries, got {}".format(g.n_nodes, p.shape)
            )
        if self.mode == "convolution" and targets is None:
            return self._convolution(t, p)

        at_nodes = targets is None
        targets = g.nodes if at_nodes else np.asarray(targets, dtype=float)
        targets = targets.reshape(-1, g.d)

        if self.problem.kernel_target_independent:
            S = self._block(t, targets[:1], p) * g.cell_volume
            return np.broadcast_to(S, (len(targets), g.d)).copy()

        if at_nodes and self.problem.kernel_time_independent:
            K = self._cached_matrix()
            if K is not None:
                return symmetric_sum(K * p[None, :, None], axis=1) * g.cell_volume

        rows = max(int(config["kernel.chunk_rows"]), 1)
        S = np.empty((len(targets), g.d))
        for start in range(0, len(targets), rows):
            stop = start + rows
            S[start:stop] = self._block(t, targets[start:stop], p)
        return S * g.cell_volume


def kernel_sum(p_level, g, K, t, targets=None, quadrature=None):
    """
    S_i(t, x^k) = sum_{s in Z_M} K_i(t, x^k, x^s) p^s h^d at every node k.

    Args:
        p_level: (n_nodes,) node values of one level
        g: Grid
        K: kernel callback, or a Problem
        t: time
        targets: optional (n, d) evaluation points instead of the nodes
        quadrature: a KernelQuadrature to reuse (caches the kernel matrix)

    Returns:
        (n_targets, d) array
    """
    if quadrature is None:
        if not hasattr(K, "K"):
            K = SimpleNamespace(
                K=K,
                kernel_time_independent=False,
                kernel_translation_invariant=False,
                kernel_target_independent=False,
            )
        quadrature = KernelQuadrature(K, g)
    return quadrature(p_level, t, targets=targets)


def _advection(p_level, g, f, S, t):
    p = np.asarray(p_level, dtype=float)
    velocity = np.asarray(f(t, g.nodes), dtype=float).reshape(-1, g.d) + S
    flux = velocity * p[:, None]
    out = np.zeros(g.shape)
    for i in range(g.d):
        F = flux[:, i].reshape(g.shape)
        out -= (np.roll(F, -1, axis=i) - np.roll(F, 1, axis=i)) / (2 * g.h)
    out = out.reshape(-1)
    out[g.boundary_mask] = 0.0
    return out, velocity


def explicit_drift(p_level, g, f, K, t, quadrature=None):
    """
    Central-difference divergence of the flux (f + S) p at interior nodes,
    with the sign of the scheme; zero at boundary nodes.
    """
    S = kernel_sum(p_level, g, K, t, quadrature=quadrature)
    return _advection(p_level, g, f, S, t)[0]


def assemble_implicit(g, A_fn, t_next, cross=True):
    """
    Diffusion operator B at time t_next, so a step reads
    (p^{n+1} - p^n) / kappa = drift^n + B p^{n+1}.

    Row k (interior) holds a_ii(x^{k +- e_i}) / (2h^2) at k +- e_i and
    -2 a_ii(x^k) / (2h^2) at k for every axis, and for every ordered pair
    i != j the four corners k +- e_i +- e_j with +-a_ij / (8h^2).
    Boundary rows are empty.

    :param A_fn: (t, x (..., d)) -> (..., d, d)
    :param cross: keep the i != j terms
    """
    n, d, h = g.n_nodes, g.d, g.h
    A = np.asarray(A_fn(t_next, g.nodes), dtype=float).reshape(n, d, d)
    k = g.interior
    strides = [(2 * g.M + 1) ** (d - 1 - i) for i in range(d)]

    rows, cols, vals = [], [], []

    def put(offset, coef):
        cols_ = k + offset
        rows.append(k)
        cols.append(cols_)
        vals.append(coef(cols_))

    for i in range(d):
        s = strides[i]
        put(s, lambda c, i=i: A[c, i, i] / (2 * h**2))
        put(0, lambda c, i=i: -2 * A[c, i, i] / (2 * h**2))
        put(-s, lambda c, i=i: A[c, i, i] / (2 * h**2))

    if cross:
        for i in range(d):
            for j in range(d):
                if i == j:
                    continue
                si, sj = strides[i], strides[j]
                for sign_i, sign_j in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    put(
                        sign_i * si + sign_j * sj,
                        lambda c, i=i, j=j, w=sign_i * sign_j: w
                        * A[c, i, j]
                        / (8 * h**2),
                    )

    return linalg.sparse_matrix(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (n, n)
    )


class FokkerPlanckStepper:
    """
    Advances node levels by one step. The implicit system is refactorized at
    every step unless sigma is flagged constant in time and space.
    """

    def __init__(self, problem, g, kernel_mode="exact", solver="auto"):
        self.problem = problem
        self.grid = g
        self.solver = solver
        self.quadrature = KernelQuadrature(problem, g, mode=kernel_mode)
        self._factorized = None
        self.last_speed = 0.0
        self.last_residual = 0.0

    def _A(self, t, x):
        return diffusion_matrix(self.problem, t, x)

    def system(self, t_next, cross=True):
        B = assemble_implicit(self.grid, self._A, t_next, cross=cross)
        eye = sp.identity(self.grid.n_nodes, format="csr")
        return (eye - self.grid.kappa * B).tocsr()

    def factorized(self, t_next):
        if self._factorized is not None and self.problem.sigma_time_space_independent:
            return self._factorized
        system = self.system(t_next)
        preconditioner = None
        if self.solver == "iterative" or (
            self.solver == "auto"
            and self.grid.d > 1
            and self.grid.n_nodes > config["solver.direct_max_unknowns"]
        ):
            preconditioner = self.system(t_next, cross=False)
        self._factorized = linalg.factorize(
            system, method=self.solver, preconditioner=preconditioner
        )
        return self._factorized

    def rhs(self, p_level, n):
        g = self.grid
        t = g.t(n)
        S = self.quadrature(p_level, t)
        drift, velocity = _advection(p_level, g, self.problem.f, S, t)
        interior = ~g.boundary_mask
        self.last_speed = (
            float(np.abs(velocity[interior]).max()) if interior.any() else 0.0
        )
        b = np.asarray(p_level, dtype=float) + g.kappa * drift
        b[g.boundary_mask] = 0.0
        return b

    def __call__(self, p_level, n):
        b = self.rhs(p_level, n)
        F = self.factorized(self.grid.t(n + 1))
        p_next = linalg.solve(F, b)
        p_next[self.grid.boundary_mask] = 0.0
        self.last_residual = linalg.relative_residual(F.matrix, p_next, b)
        return p_next


def step(p_level, g, problem, n, stepper=None):
    """
    p^{n+1} from p^n: solve (I - kappa B(t_{n+1})) p^{n+1} = p^n + kappa drift(t_n)
    """
    stepper = stepper or FokkerPlanckStepper(problem, g)
    return stepper(p_level, n)


def initial_level(problem, g):
    p = np.asarray(problem.p0(g.nodes), dtype=float).reshape(-1).copy()
    p[g.boundary_mask] = 0.0
    return p


def solve_fp(
    problem, g, diagnostics=False, kernel_mode="exact", solver="auto", progress=False
):
    """
    Run the scheme over n = 0..N.

    Args:
        problem: Problem
        g: Grid
        diagnostics: record StepDiagnostics for level 0 and every step
        kernel_mode: 'exact' or 'convolution', see KernelQuadrature
        solver: linear solver method, see linalg.factorize
        progress: show a progress bar

    Returns:
        DensityField with all N + 1 levels

    Raises:
        LinearSolveError: from the implicit solve
    """
    if g.d != problem.d:
        raise ValueError(
            "grid dimension {} does not match problem dimension {}".format(
                g.d, problem.d
            )
        )
    stepper = FokkerPlanckStepper(problem, g, kernel_mode=kernel_mode, solver=solver)
    values = np.empty((g.N + 1, g.n_nodes))
    values[0] = initial_level(problem, g)
    mass0 = level_mass(values[0], g)

    records = []
    if diagnostics:
        records.append(
            StepDiagnostics(
                0, mass0, float(values[0].min()), float(values[0].max()), 0.0
            )
        )
    warned = set()

    for n in tqdm(range(g.N), desc=problem.name, disable=not progress):
        values[n + 1] = stepper(values[n], n)

        level = values[n + 1]
        mass = level_mass(level, g)
        lo, hi = float(level.min()), float(level.max())
        if diagnostics:
            records.append(StepDiagnostics(n + 1, mass, lo, hi, stepper.last_residual))

        if "cfl" not in warned and g.kappa * stepper.last_speed / g.h > 1:
            warned.add("cfl")
            logger.warning(
                "%s: kappa * max|f + S| / h = %.3g > 1 at step %d, "
                "explicit advection may be unstable",
                problem.name,
                g.kappa * stepper.last_speed / g.h,
                n,
            )
        if "positivity" not in warned and lo < -POSITIVITY_TOLERANCE * hi:
            warned.add("positivity")
            logger.warning(
                "%s: loss of positivity at step %d (min %.3e, max %.3e)",
                problem.name,
                n + 1,
                lo,
                hi,
            )
        if "mass" not in warned and abs(mass - mass0) > MASS_DRIFT_TOLERANCE * abs(
            mass0
        ):
            warned.add("mass")
            logger.warning(
                "%s: mass drifted from %.6f to %.6f at step %d",
                problem.name,
                mass0,
                mass,
                n + 1,
            )

    logger.log(
        25,
        "Solved {} on d={} M={} N={} (h={:.4g}, kappa={:.4g})".format(
            problem.name, g.d, g.M, g.N, g.h, g.kappa
        ),
    )
    return DensityField(
        grid=g,
        values=values,
        diagnostics=tuple(records) if diagnostics else None,
        description=problem.name,
    )


def discrete_l2_error(a, b, g):
    """sqrt(sum_k |a_k - b_k|^2 h^d)"""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("level sizes differ: {} vs {}".format(a.shape, b.shape))
    if a.shape[-1] != g.n_nodes:
        raise ValueError(
            "levels have {} entries, grid has {} nodes".format(a.shape[-1], g.n_nodes)
        )
    return float(np.sqrt(np.sum((a - b) ** 2) * g.cell_volume))
