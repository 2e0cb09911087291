"""Exact lattice Green's functions, Poisson kernels and loop-measure functionals.

Everything here is a linear solve against ``I - P`` where ``P`` is the simple
random walk transition matrix restricted to a vertex set, optionally with the
signed weights ``q(e) = Q(e) / 4`` given by an :class:`EdgeSignTable`.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain import (
    ONE,
    ORIGIN,
    BoundaryEdge,
    EdgeSignTable,
    LatticeDomain,
    OutOfDomain,
    Point,
    neighbors,
)

DENSE_LIMIT = 4096
RESIDUAL_TOL = 1e-12


class SolveFailure(RuntimeError):
    pass


def system_matrix(A: LatticeDomain, table: EdgeSignTable | None = None) -> sp.csr_matrix:
    """``I - P`` (or ``I - P^q``) over ``A.points`` order."""
    idx = A.index
    rows, cols, vals = [], [], []
    for p, q in A.interior_edges():
        w = -0.25 * (table.sign(p, q) if table is not None else 1)
        i, j = idx[p], idx[q]
        rows += [i, j]
        cols += [j, i]
        vals += [w, w]
    n = len(A)
    M = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return (sp.identity(n, format="csr") + M).tocsr()


@lru_cache(maxsize=64)
def _full_matrix(A: LatticeDomain, table: EdgeSignTable | None) -> sp.csr_matrix:
    return system_matrix(A, table)


class GreenTable:
    """Factorisation of ``I - P`` on ``A`` minus ``removed``, with cached columns.

    Removal is done by masking rows and columns of the full matrix of ``A``.
    """

    def __init__(
        self,
        A: LatticeDomain,
        table: EdgeSignTable | None = None,
        removed: Iterable[Point] = (),
    ):
        self.domain = A
        self.table = table
        self.removed = frozenset(removed)
        keep = [i for i, p in enumerate(A.points) if p not in self.removed]
        self.points = [A.points[i] for i in keep]
        self.index = {p: k for k, p in enumerate(self.points)}
        M = _full_matrix(A, table)
        keep_arr = np.asarray(keep, dtype=np.int64)
        self.matrix = M[keep_arr][:, keep_arr].tocsc()
        self._columns: dict[Point, np.ndarray] = {}
        self._factor()

    def __len__(self) -> int:
        return len(self.points)

    def _factor(self):
        n = len(self.points)
        if n == 0:
            self._dense = None
            self._sparse = None
            self.log_det = 0.0
            return
        if n <= DENSE_LIMIT:
            lu, piv = sla.lu_factor(self.matrix.toarray(), check_finite=False)
            diag = np.diag(lu)
            swaps = int(np.sum(piv != np.arange(n)))
            sign = (-1) ** swaps * np.prod(np.sign(diag))
            self._dense, self._sparse = (lu, piv), None
        else:
            lu = spla.splu(self.matrix, permc_spec="COLAMD")
            diag = lu.U.diagonal()
            sign = _perm_sign(lu.perm_r) * _perm_sign(lu.perm_c) * np.prod(np.sign(diag))
            self._dense, self._sparse = None, lu
        if sign <= 0 or np.any(diag == 0):
            raise SolveFailure("I - P is not positive-determinant on this vertex set")
        self.log_det = float(np.sum(np.log(np.abs(diag))))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            x = sla.lu_solve(self._dense, rhs, check_finite=False)
        else:
            x = self._sparse.solve(rhs)
        resid = np.max(np.abs(self.matrix @ x - rhs))
        if resid > RESIDUAL_TOL * max(1.0, float(np.max(np.abs(x)))):
            raise SolveFailure(f"residual {resid:.3e} above tolerance")
        return x

    def column(self, w: Point) -> np.ndarray:
        """``G(., w)`` over ``self.points``."""
        col = self._columns.get(w)
        if col is None:
            if w not in self.index:
                raise OutOfDomain(f"{w} is not in the (reduced) domain")
            e = np.zeros(len(self.points))
            e[self.index[w]] = 1.0
            col = self.solve(e)
            self._columns[w] = col
        return col

    def __call__(self, z: Point, w: Point) -> float:
        if z not in self.index:
            if z in self.domain.vertices or z in self.removed:
                return 0.0
            raise OutOfDomain(f"{z} is not in the domain")
        return float(self.column(w)[self.index[z]])

    def value_or_zero(self, z: Point, w: Point) -> float:
        if z not in self.index or w not in self.index:
            return 0.0
        return float(self.column(w)[self.index[z]])


def _perm_sign(perm: np.ndarray) -> int:
    perm = np.asarray(perm)
    seen = np.zeros(len(perm), dtype=bool)
    sign = 1
    for i in range(len(perm)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


@lru_cache(maxsize=48)
def green_table(
    A: LatticeDomain, table: EdgeSignTable | None = None, removed: frozenset = frozenset()
) -> GreenTable:
    return GreenTable(A, table, removed)


def green(A: LatticeDomain, z: Point, w: Point, table: EdgeSignTable | None = None) -> float:
    """``G_A(z, w)``, or the signed ``G^q_A(z, w)`` when a sign table is given."""
    for p in (z, w):
        if p not in A.vertices:
            raise OutOfDomain(f"{p} is not in the domain")
    return green_table(A, table)(z, w)


def interior_poisson(A: LatticeDomain, z: Point, b: BoundaryEdge) -> float:
    """``H_A(z, b)``: probability that the walk from ``z`` leaves through ``b``."""
    if z not in A.vertices:
        raise OutOfDomain(f"{z} is not in the domain")
    return 0.25 * green_table(A)(z, b.inner)


def boundary_poisson(A: LatticeDomain, a: BoundaryEdge, b: BoundaryEdge) -> float:
    """``H_dA(a, b)``: total weight of walks entering through ``a`` and leaving through ``b``."""
    return green_table(A)(a.inner, b.inner) / 16.0


def boundary_poisson_matrix(A: LatticeDomain, edges: Sequence[BoundaryEdge]) -> np.ndarray:
    gt = green_table(A)
    inner = sorted({e.inner for e in edges})
    cols = {v: gt.column(v) for v in inner}
    out = np.empty((len(edges), len(edges)))
    for i, a in enumerate(edges):
        for j, b in enumerate(edges):
            out[i, j] = cols[b.inner][gt.index[a.inner]] / 16.0
    return out


def edge_sign(table: EdgeSignTable | None, p: Point, q: Point) -> int:
    return 1 if table is None else table.sign(p, q)


def kernel_from_vertex(
    A: LatticeDomain,
    x: Point,
    a: BoundaryEdge,
    removed: Iterable[Point],
    table: EdgeSignTable | None = None,
) -> float:
    """Weight of walks from ``x`` that step into ``K = A - removed``, stay there and exit through ``a``.

    The one-step walk ``[x, a_+]`` counts when ``x = a_-``.
    """
    removed = frozenset(removed)
    gt = green_table(A, table, removed)
    s_a = edge_sign(table, a.inner, a.outer)
    total = 0.25 * s_a if x == a.inner else 0.0
    if a.inner not in gt.index:
        return total
    if x in gt.index:
        # x itself lies in K: the first-step sum collapses to G_K(x, a_-)
        return 0.25 * s_a * gt(x, a.inner)
    col = gt.column(a.inner)
    for y in neighbors(x):
        if y in gt.index:
            total += 0.25 * edge_sign(table, x, y) * col[gt.index[y]] * 0.25 * s_a
    return total


def kernel_row(
    A: LatticeDomain,
    x: Point,
    edges: Sequence[BoundaryEdge],
    removed: Iterable[Point],
    table: EdgeSignTable | None = None,
) -> np.ndarray:
    """:func:`kernel_from_vertex` for many exit edges, using symmetry of ``G_K``."""
    removed = frozenset(removed)
    gt = green_table(A, table, removed)
    if x in gt.index:
        col = gt.column(x)
        vals = []
        for a in edges:
            g = col[gt.index[a.inner]] if a.inner in gt.index else 0.0
            vals.append(0.25 * edge_sign(table, a.inner, a.outer) * g)
        return np.array(vals)
    acc = np.zeros(len(gt))
    for y in neighbors(x):
        if y in gt.index:
            acc += 0.25 * edge_sign(table, x, y) * gt.column(y)
    out = np.empty(len(edges))
    for k, a in enumerate(edges):
        s_a = edge_sign(table, a.inner, a.outer)
        v = 0.25 * s_a if x == a.inner else 0.0
        if a.inner in gt.index:
            v += acc[gt.index[a.inner]] * 0.25 * s_a
        out[k] = v
    return out


def signed_exit(A: LatticeDomain, table: EdgeSignTable, z: Point, a: BoundaryEdge) -> float:
    """``R_A(z, a)``: signed weight of walks from ``z`` leaving through ``a`` without revisiting {0, 1}."""
    if z not in A.vertices:
        raise OutOfDomain(f"{z} is not in the domain")
    return kernel_from_vertex(A, z, a, (ORIGIN, ONE), table)


def signed_exit_row(
    A: LatticeDomain, table: EdgeSignTable, z: Point, edges: Sequence[BoundaryEdge]
) -> np.ndarray:
    return kernel_row(A, z, edges, (ORIGIN, ONE), table)


def log_det_i_minus_p(A: LatticeDomain, table: EdgeSignTable | None = None) -> float:
    """``log det(I - P)``, i.e. minus the total loop measure of ``A``."""
    return green_table(A, table).log_det


def odd_loop_mass(A: LatticeDomain, table: EdgeSignTable) -> tuple[float, float]:
    """Loop measure of loops with odd winding about ``w0`` and ``exp(2 m)``."""
    delta = log_det_i_minus_p(A, table) - log_det_i_minus_p(A)
    return 0.5 * delta, float(np.exp(delta))


def loop_factor(
    V: Sequence[Point], A: LatticeDomain, table: EdgeSignTable | None = None
) -> float:
    """``F(V; A)`` as the product of diagonal Green's values with ``V`` removed one vertex at a time."""
    removed: list[Point] = []
    out = 1.0
    for v in V:
        if v not in A.vertices:
            raise OutOfDomain(f"{v} is not in the domain")
        if v in removed:
            continue
        out *= green_table(A, table, frozenset(removed))(v, v)
        removed.append(v)
    return out


def qbar(A: LatticeDomain, table: EdgeSignTable) -> float:
    """``(1/4) G^q_A(0, 0) G^q_{A - 0}(1, 1)``."""
    return 0.25 * loop_factor([ORIGIN, ONE], A, table)


def clear_caches() -> None:
    """Drop cached factorisations (large squares hold hundreds of MB)."""
    green_table.cache_clear()
    _full_matrix.cache_clear()
