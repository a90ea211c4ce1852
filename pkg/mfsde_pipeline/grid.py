"""
Space-time discretization of the truncated domain (-alpha, alpha)^d x [0, T].

Nodes x^k = h k are indexed by k in Z_M = {k: |k_i| <= M} and flattened in
lexicographic order over (k_1, ..., k_d), ascending from -M. Cells are the
half-open boxes [x^k, x^{k+1}).
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from mfsde_pipeline import GridIndexError

OUTSIDE = None


@dataclass(frozen=True)
class Grid:
    d: int
    alpha: float
    M: int
    T: float
    N: int
    h: float = field(init=False, repr=False)
    kappa: float = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("d must be an integer >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if int(self.M) != self.M or self.M < 2:
            raise ValueError("M must be an integer >= 2")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be an integer >= 1")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "T", float(self.T))
        # stored once, every stencil coefficient reads these
        object.__setattr__(self, "h", self.alpha / self.M)
        object.__setattr__(self, "kappa", self.T / self.N)

    @property
    def shape(self):
        return (2 * self.M + 1,) * self.d

    @property
    def n_nodes(self):
        return (2 * self.M + 1) ** self.d

    @property
    def cell_volume(self):
        return self.h**self.d

    @cached_property
    def axis(self):
        return np.arange(-self.M, self.M + 1) * self.h

    @cached_property
    def times(self):
        return np.arange(self.N + 1) * self.kappa

    def t(self, n):
        return n * self.kappa

    @cached_property
    def indices(self):
        """(n_nodes, d) integer node indices in lexicographic order"""
        ks = np.meshgrid(*[np.arange(-self.M, self.M + 1)] * self.d, indexing="ij")
        return np.stack(ks, axis=-1).reshape(-1, self.d)

    @cached_property
    def nodes(self):
        """(n_nodes, d) node positions x^k = h k"""
        return self.indices * self.h

    @cached_property
    def boundary_mask(self):
        return np.abs(self.indices).max(axis=1) == self.M

    @cached_property
    def interior(self):
        return np.flatnonzero(~self.boundary_mask)

    def flat_index(self, k):
        k = check_index(self, k)
        return int(np.ravel_multi_index(tuple(np.asarray(k) + self.M), self.shape))

    def with_resolution(self, M=None, N=None):
        return Grid(
            d=self.d,
            alpha=self.alpha,
            M=self.M if M is None else M,
            T=self.T,
            N=self.N if N is None else N,
        )


def check_index(g, k):
    k = tuple(np.atleast_1d(k).tolist())
    if len(k) != g.d or any(int(ki) != ki or abs(ki) > g.M for ki in k):
        raise GridIndexError(
            "index out of range: {} for M={}, d={}".format(k, g.M, g.d)
        )
    return tuple(int(ki) for ki in k)


def unit_offset(d, i):
    """eta^i, the i-th unit offset"""
    eta = np.zeros(d, dtype=int)
    eta[i] = 1
    return eta


def node_position(g, k):
    return g.h * np.asarray(check_index(g, k), dtype=float)


def is_boundary(g, k):
    return max(abs(ki) for ki in check_index(g, k)) == g.M


def locate_cells(g, points):
    """
    Vectorized cell lookup.
    :param points: array (..., d)
    :returns: (indices (..., d) int, inside (...) bool); indices are only
        meaningful where inside is True
    """
    x = np.asarray(points, dtype=float)
    finite = np.all(np.isfinite(x), axis=-1)
    x = np.where(np.isfinite(x), x, 0.0)
    q = np.floor(x / g.h)
    q = np.where(g.h * (q + 1) <= x, q + 1, q)
    q = np.where(g.h * q > x, q - 1, q)
    q = q.astype(np.int64)
    inside = finite & np.all((q >= -g.M) & (q <= g.M - 1), axis=-1)
    return q, inside


def locate_cell(g, x):
    """
    Index k with x in [x^k, x^{k+1}) componentwise, or OUTSIDE.
    """
    x = np.asarray(x, dtype=float).reshape(g.d)
    q, inside = locate_cells(g, x)
    if not inside:
        return OUTSIDE
    return tuple(int(qi) for qi in q)


def symmetric_sum(values, axis=-1):
    """
    Sum along a node axis, pairing node k with node -k before accumulating.

    On Z_M the lexicographic position of -k is the mirror of the position of
    k, so odd integrands on sign-symmetric nodes cancel exactly.
    """
    values = np.moveaxis(np.asarray(values), axis, -1)
    n = values.shape[-1]
    half = n // 2
    folded = values[..., :half] + values[..., : n - half - 1 : -1]
    total = folded.sum(axis=-1)
    if n % 2:
        total = total + values[..., half]
    return total
