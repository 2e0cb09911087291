"""Loop erasure, conditioned-walk Monte Carlo and exact self-avoiding-walk sums.

Conventions
-----------
A walk from boundary edge ``a`` to boundary edge ``b`` is ``[a+, a-, ..., b-, b+]``.
Self-avoidance and loop erasure refer to its vertices inside the domain; the two
outer endpoints are labels of the edges and are never identified with each
other, even when ``a+ == b+``.

Exact sums use depth-first enumeration of self-avoiding paths.  The loop factor
``F(eta; A) = det G_A[eta, eta]`` is accumulated one vertex at a time through a
Cholesky factor of the Green's matrix restricted to the current path, so each
new vertex contributes the Schur pivot ``G_{A - eta}(v, v)``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numba as nb
import numpy as np

from . import harmonic as hc
from .domain import (
    BRANCH_BLOCK,
    ONE,
    ORIGIN,
    STEPS,
    BoundaryEdge,
    EdgeSignTable,
    LatticeDomain,
    Point,
    Walk,
    boundary_edges,
    build_branch_cut,
    neighbors,
    validate_domain,
)

MAX_ENUM_BOX = 5
WORKERS_ENV = "LERWGREEN_WORKERS"


class TooLarge(ValueError):
    pass


class ZeroConditioningMass(ValueError):
    pass


class LambdaNotInterior(ValueError):
    pass


# Loop erasure ------------------------------------------------------------


def loop_erase(walk: Walk | Sequence[Point]) -> Walk:
    """Chronological loop erasure: jump to the last visit of each retained point."""
    pts = list(walk.points if isinstance(walk, Walk) else walk)
    if not pts:
        return Walk(())
    last = {p: j for j, p in enumerate(pts)}
    s = last[pts[0]]
    out = [pts[s]]
    while s < len(pts) - 1:
        s = last[pts[s + 1]]
        out.append(pts[s])
    return Walk(tuple(out))


# Lattice arrays shared by the compiled kernels ---------------------------


def neighbor_array(A: LatticeDomain) -> np.ndarray:
    """``nbr[i, d]`` is the index of ``points[i] + STEPS[d]`` or -1 when outside ``A``."""
    idx = A.index
    nbr = np.full((len(A), 4), -1, dtype=np.int64)
    for i, (x, y) in enumerate(A.points):
        for d, (dx, dy) in enumerate(STEPS):
            nbr[i, d] = idx.get((x + dx, y + dy), -1)
    return nbr


def _direction(p: Point, q: Point) -> int:
    return STEPS.index((q[0] - p[0], q[1] - p[1]))


def dense_green(A: LatticeDomain, removed=frozenset()) -> tuple[np.ndarray, list[Point]]:
    gt = hc.green_table(A, None, frozenset(removed))
    G = gt.solve(np.eye(len(gt)))
    return 0.5 * (G + G.T), gt.points


# Counter-based random numbers --------------------------------------------
#
# Sample i of a run with seed s draws from a SplitMix64 stream whose state is
# initialised to mix64(s ^ i), so the result of sample i does not depend on
# how samples are distributed over workers.

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True, inline="always")
def _uniform(state):
    state = state + _GAMMA
    return state, float(_mix64(state) >> _S11) * _INV53


@nb.njit(cache=True)
def _stream(seed, i):
    return _mix64(np.uint64(seed) ^ np.uint64(i))


def uniforms(seed: int, index: int, count: int) -> np.ndarray:
    """The first ``count`` uniforms of stream ``index`` (exposed for testing)."""
    return _uniforms(np.uint64(seed), np.uint64(index), count)


@nb.njit(cache=True)
def _uniforms(seed, index, count):
    out = np.empty(count)
    st = _stream(seed, index)
    for j in range(count):
        st, out[j] = _uniform(st)
    return out


# Conditioned walk and its loop erasure -----------------------------------


def _htransform_tables(A: LatticeDomain, b: BoundaryEdge):
    """Cumulative one-step probabilities of the walk conditioned to leave through ``b``."""
    gt = hc.green_table(A)
    h = 0.25 * gt.column(b.inner)  # h(v) = H_A(v, b)
    if np.any(h <= 0):
        raise ZeroConditioningMass("b cannot be reached from every vertex")
    nbr = neighbor_array(A)
    n = len(A)
    cum = np.zeros((n, 4))
    exit_v = A.index[b.inner]
    exit_d = _direction(b.inner, b.outer)
    for v in range(n):
        acc = 0.0
        for d in range(4):
            y = nbr[v, d]
            if y >= 0:
                acc += 0.25 * h[y] / h[v]
            elif v == exit_v and d == exit_d:
                acc += 0.25 / h[v]
            cum[v, d] = acc
        cum[v] /= acc  # remove rounding drift; acc is 1 up to solver error
    return nbr, cum, exit_v, exit_d


@nb.njit(cache=True, nogil=True)
def _edge_hits(nbr, cum, start, exit_v, exit_d, u0, u1, seed, lo, hi):
    n = nbr.shape[0]
    pos = np.full(n, -1, np.int64)
    stack = np.empty(n, np.int64)
    hits = 0
    for i in range(lo, hi):
        st = _stream(seed, i)
        top = 0
        stack[0] = start
        pos[start] = 0
        v = start
        while True:
            st, u = _uniform(st)
            d = 0
            while d < 3 and u >= cum[v, d]:
                d += 1
            w = nbr[v, d]
            if w < 0:
                break  # only the step through b has positive weight
            if pos[w] >= 0:
                k = pos[w]
                for j in range(k + 1, top + 1):
                    pos[stack[j]] = -1
                top = k
            else:
                top += 1
                stack[top] = w
                pos[w] = top
            v = w
        for j in range(top):
            p, q = stack[j], stack[j + 1]
            if (p == u0 and q == u1) or (p == u1 and q == u0):
                hits += 1
                break
        for j in range(top + 1):
            pos[stack[j]] = -1
    return hits


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    samples: int
    seed: int


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def mc_edge_probability(
    A: LatticeDomain,
    a: BoundaryEdge,
    b: BoundaryEdge,
    samples: int,
    seed: int,
    workers: int | None = None,
) -> McEstimate:
    """Fraction of conditioned walks ``a -> b`` whose loop erasure uses the edge [0, 1]."""
    if a == b:
        raise ValueError("a and b must differ")
    if not {ORIGIN, ONE} <= A.vertices:
        raise ValueError("the domain must contain 0 and 1")
    nbr, cum, exit_v, exit_d = _htransform_tables(A, b)
    start = A.index[a.inner]
    u0, u1 = A.index[ORIGIN], A.index[ONE]
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    workers = workers or default_workers()
    bounds = np.linspace(0, samples, workers + 1).astype(np.int64)

    def run(k):
        return _edge_hits(
            nbr, cum, start, exit_v, exit_d, u0, u1, np.uint64(seed), bounds[k], bounds[k + 1]
        )

    if workers == 1:
        hits = run(0)
    else:
        with ThreadPoolExecutor(workers) as ex:
            hits = sum(ex.map(run, range(workers)))
    mean = hits / samples
    return McEstimate(mean, math.sqrt(mean * (1 - mean) / samples), samples, seed)


def sample_conditioned_walk(
    A: LatticeDomain, a: BoundaryEdge, b: BoundaryEdge, rng: np.random.Generator
) -> Walk:
    """One walk ``[a+, a-, ..., b-, b+]`` conditioned to leave through ``b`` (h-transform)."""
    if a == b:
        raise ValueError("a and b must differ")
    nbr, cum, exit_v, exit_d = _htransform_tables(A, b)
    pts = A.points
    v = A.index[a.inner]
    out = [a.outer, a.inner]
    while True:
        d = int(np.searchsorted(cum[v], rng.random(), side="right"))
        d = min(d, 3)
        w = nbr[v, d]
        if w < 0:
            out.append(b.outer)
            return Walk(tuple(out))
        v = w
        out.append(pts[v])


@nb.njit(cache=True, nogil=True)
def _free_walks(nbr, start, target, seed, lo, hi):
    """Exit counts per (vertex, direction) and visit moments at ``target`` for plain walks."""
    n = nbr.shape[0]
    exits = np.zeros((n, 4), np.int64)
    s1 = 0.0
    s2 = 0.0
    for i in range(lo, hi):
        st = _stream(seed, i)
        v = start
        visits = 0
        while True:
            if v == target:
                visits += 1
            st, u = _uniform(st)
            d = min(int(u * 4.0), 3)
            w = nbr[v, d]
            if w < 0:
                exits[v, d] += 1
                break
            v = w
        s1 += visits
        s2 += visits * visits
    return exits, s1, s2


def simulate_free_walks(
    A: LatticeDomain, start: Point, samples: int, seed: int, target: Point | None = None
):
    """Unconditioned walks from ``start`` until they leave ``A``.

    Returns a dict of exit counts per boundary edge and the mean and standard
    error of the number of visits to ``target``.
    """
    nbr = neighbor_array(A)
    t = A.index[target] if target is not None else -1
    exits, s1, s2 = _free_walks(nbr, A.index[start], t, np.uint64(seed), 0, samples)
    counts = {}
    for e in boundary_edges(A):
        counts[e] = int(exits[A.index[e.inner], _direction(e.inner, e.outer)])
    mean = s1 / samples
    var = max(s2 / samples - mean * mean, 0.0)
    return counts, mean, math.sqrt(var / samples)


# Exact enumeration -------------------------------------------------------


@nb.njit(cache=True)
def _saw_sums(nbr, G, starts, is_end, pattern, out):
    """Sum ``4^-k det G[eta, eta]`` over self-avoiding paths ``eta`` of ``k`` steps.

    ``out[c, s, v]`` collects paths from ``s`` to ``v`` where ``c`` is 1 if the
    path runs through ``pattern`` in order, 2 if it runs through its reversal and
    0 otherwise.
    """
    n = nbr.shape[0]
    L = np.zeros((n, n))
    path = np.empty(n, np.int64)
    nxt = np.empty(n, np.int64)
    pos = np.full(n, -1, np.int64)
    F = np.empty(n)
    plen = pattern.shape[0]
    for s in starts:
        depth = 0
        path[0] = s
        pos[s] = 0
        nxt[0] = 0
        L[0, 0] = math.sqrt(G[s, s])
        F[0] = G[s, s]
        if is_end[s]:
            out[0, s, s] += F[0]
        while depth >= 0:
            v = path[depth]
            if nxt[depth] == 4:
                pos[v] = -1
                depth -= 1
                continue
            w = nbr[v, nxt[depth]]
            nxt[depth] += 1
            if w < 0 or pos[w] >= 0:
                continue
            k = depth + 1
            sq = 0.0
            for i in range(k):
                acc = G[path[i], w]
                for j in range(i):
                    acc -= L[i, j] * L[k, j]
                L[k, i] = acc / L[i, i]
                sq += L[k, i] * L[k, i]
            piv = G[w, w] - sq
            L[k, k] = math.sqrt(piv)
            F[k] = F[depth] * piv * 0.25
            path[k] = w
            pos[w] = k
            nxt[k] = 0
            depth = k
            if is_end[w]:
                c = 0
                if plen >= 2:
                    fwd = True
                    rev = True
                    for j in range(plen - 1):
                        p0 = pos[pattern[j]]
                        p1 = pos[pattern[j + 1]]
                        if p0 < 0 or p1 < 0:
                            fwd = False
                            rev = False
                            break
                        if p1 != p0 + 1:
                            fwd = False
                        if p1 != p0 - 1:
                            rev = False
                    if fwd:
                        c = 1
                    elif rev:
                        c = 2
                out[c, s, w] += F[k]
    return out


def _check_box(A: LatticeDomain, max_box: int = MAX_ENUM_BOX):
    xmin, xmax, ymin, ymax = A.bounding_box
    if xmax - xmin + 1 > max_box or ymax - ymin + 1 > max_box:
        raise TooLarge(f"enumeration limited to a {max_box}x{max_box} bounding box")


class SawSums:
    """Weighted sums of ``p_hat`` over self-avoiding walks between all boundary edges of ``A``."""

    def __init__(self, A: LatticeDomain, pattern: Sequence[Point] = (ORIGIN, ONE), max_box=MAX_ENUM_BOX):
        _check_box(A, max_box)
        self.domain = A
        G, pts = dense_green(A)
        idx = A.index
        self.edges = boundary_edges(A)
        is_end = np.zeros(len(A), dtype=np.bool_)
        for e in self.edges:
            is_end[idx[e.inner]] = True
        starts = np.flatnonzero(is_end).astype(np.int64)
        pat = np.array([idx[p] for p in pattern if p in idx], dtype=np.int64)
        if len(pat) != len(pattern):
            pat = np.zeros(0, dtype=np.int64)
        out = np.zeros((3, len(A), len(A)))
        _saw_sums(neighbor_array(A), G, starts, is_end, pat, out)
        self.sums = out / 16.0  # the two boundary steps a+ -> a- and b- -> b+

    def plus(self, a: BoundaryEdge, b: BoundaryEdge) -> float:
        i, j = self.domain.index[a.inner], self.domain.index[b.inner]
        return float(self.sums[1, i, j])

    def minus(self, a: BoundaryEdge, b: BoundaryEdge) -> float:
        i, j = self.domain.index[a.inner], self.domain.index[b.inner]
        return float(self.sums[2, i, j])

    def total(self, a: BoundaryEdge, b: BoundaryEdge) -> float:
        i, j = self.domain.index[a.inner], self.domain.index[b.inner]
        return float(self.sums[:, i, j].sum())


def exact_edge_probability(A: LatticeDomain, a: BoundaryEdge, b: BoundaryEdge) -> float:
    """``P(a, b; A)`` by enumerating every self-avoiding walk ``a -> b`` through [0, 1]."""
    sums = SawSums(A)
    return (sums.plus(a, b) + sums.minus(a, b)) / hc.boundary_poisson(A, a, b)


# The determinant identity ------------------------------------------------


@dataclass(frozen=True)
class IdentityReport:
    exact: float
    formula: float
    rel_error: float
    ok: bool


def identity_terms(
    A: LatticeDomain, edges: Sequence[BoundaryEdge], table: EdgeSignTable | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand side of the edge-probability identity for all pairs in ``edges``.

    Also returns the same expression with the 2x2 determinant replaced by the
    sum of its two products computed with unsigned walk weights.  This bounds
    every signed path sum involved and is the scale for judging round-off
    when the determinant vanishes.
    """
    if not BRANCH_BLOCK <= A.vertices:
        raise ValueError("the domain must contain 0, 1, -i and 1-i")
    table = table or build_branch_cut(A)
    _, e2m = hc.odd_loop_mass(A, table)
    qb = hc.qbar(A, table)
    R0 = hc.signed_exit_row(A, table, ORIGIN, edges)
    R1 = hc.signed_exit_row(A, table, ONE, edges)
    pref = qb * e2m / hc.boundary_poisson_matrix(A, edges)
    det = np.abs(np.outer(R0, R1) - np.outer(R1, R0))
    U0 = hc.kernel_row(A, ORIGIN, edges, (ORIGIN, ONE))
    U1 = hc.kernel_row(A, ONE, edges, (ORIGIN, ONE))
    size = np.outer(U0, U1) + np.outer(U1, U0)
    return pref * det, pref * size


def identity_matrix(
    A: LatticeDomain, edges: Sequence[BoundaryEdge], table: EdgeSignTable | None = None
) -> np.ndarray:
    return identity_terms(A, edges, table)[0]


def identity_error(exact, formula, scale):
    """Relative discrepancy; when no walk exists (``exact == 0``) the formula is judged against ``scale``."""
    exact, formula, scale = np.broadcast_arrays(*map(np.asarray, (exact, formula, scale)))
    top = np.abs(exact - formula)
    den = np.where(exact > 0, np.maximum(np.abs(exact), np.abs(formula)), scale)
    return np.where(den > 0, top / np.where(den > 0, den, 1.0), 0.0)


def identity_rhs(
    A: LatticeDomain, a: BoundaryEdge, b: BoundaryEdge, table: EdgeSignTable | None = None
) -> float:
    return float(identity_matrix(A, [a, b], table)[0, 1])


def identity_check(
    A: LatticeDomain, a: BoundaryEdge, b: BoundaryEdge, table=None, tol: float = 1e-9
) -> IdentityReport:
    exact = exact_edge_probability(A, a, b)
    rhs, size = identity_terms(A, [a, b], table)
    err = float(identity_error(exact, rhs[0, 1], size[0, 1]))
    return IdentityReport(exact, float(rhs[0, 1]), err, err <= tol)


@dataclass(frozen=True)
class DomainReport:
    pairs: int
    max_rel_error: float
    max_partition_error: float
    ok: bool


def verify_domain(A: LatticeDomain, table=None, tol: float = 1e-9, partition_tol: float = 1e-10) -> DomainReport:
    """Check the identity and the partition sum for every ordered pair of distinct boundary edges."""
    sums = SawSums(A)
    edges = sums.edges
    rhs, size = identity_terms(A, edges, table)
    Hb = hc.boundary_poisson_matrix(A, edges)
    idx = [A.index[e.inner] for e in edges]
    S = sums.sums[:, idx][:, :, idx]
    through = S[1] + S[2]
    total = S.sum(axis=0)
    off = ~np.eye(len(edges), dtype=bool)
    rel = identity_error(through / Hb, rhs, size)
    part = np.abs(total - Hb) / Hb
    err, perr = float(rel[off].max()), float(part[off].max())
    return DomainReport(int(off.sum()), err, perr, err <= tol and perr <= partition_tol)


# General prescribed walk -------------------------------------------------


def _kernel_matrix(A, xs, edges, removed, table):
    return np.array([hc.kernel_row(A, x, edges, removed, table) for x in xs])


def identity_split(
    A: LatticeDomain,
    a: BoundaryEdge,
    b: BoundaryEdge,
    lam: Sequence[Point],
    table: EdgeSignTable | None = None,
    strict: bool = True,
) -> tuple[float, float]:
    """Predicted sums of ``p_hat`` over SAWs ``a -> b`` containing ``lam`` (plus) and its reversal (minus)."""
    lam = [tuple(p) for p in lam]
    Walk(tuple(lam))
    if len(set(lam)) != len(lam):
        raise LambdaNotInterior("lambda must be self-avoiding")
    if not any(p == ORIGIN and q == ONE for p, q in zip(lam, lam[1:])):
        raise LambdaNotInterior("lambda must contain the step 0 -> 1")
    for p in lam:
        if p not in A.vertices:
            raise LambdaNotInterior(f"{p} is not in the domain")
        if strict and not all(q in A.vertices for q in neighbors(p)):
            raise LambdaNotInterior(f"{p} has a neighbour outside the domain")
    table = table or build_branch_cut(A)
    _, e2m = hc.odd_loop_mass(A, table)
    F = hc.loop_factor(lam, A)
    Fq = hc.loop_factor(lam, A, table)
    removed = frozenset(lam)
    ends = [lam[0], lam[-1]]
    D = np.linalg.det(_kernel_matrix(A, ends, [a, b], removed, None))
    Dq = np.linalg.det(_kernel_matrix(A, ends, [a, b], removed, table))
    p_lam = 4.0 ** -(len(lam) - 1)
    plus = 0.5 * p_lam * (e2m * Fq * abs(Dq) + F * D)
    minus = 0.5 * p_lam * (e2m * Fq * abs(Dq) - F * D)
    return plus, minus


# Fomin's identity --------------------------------------------------------


@nb.njit(cache=True)
def _fomin_sums(nbr, G, starts, tgt_adj, other_adj, out):
    """For SAWs in K from a start to a vertex next to the target, add
    ``4^-k det G[eta, eta] * sum_{y ~ other} G_{K - eta}(x, y)`` to ``out[s, x]``."""
    n = nbr.shape[0]
    L = np.zeros((n, n))
    path = np.empty(n, np.int64)
    nxt = np.empty(n, np.int64)
    pos = np.full(n, -1, np.int64)
    F = np.empty(n)
    U = np.zeros((n, n))  # row i holds L^-1 G[path, x] for every x
    for s in starts:
        depth = 0
        path[0] = s
        pos[s] = 0
        nxt[0] = 0
        L[0, 0] = math.sqrt(G[s, s])
        F[0] = G[s, s]
        for x in range(n):
            U[0, x] = G[s, x] / L[0, 0]
        if tgt_adj[s]:
            _fomin_record(G, U, 1, pos, other_adj, F[0], out, s)
        while depth >= 0:
            v = path[depth]
            if nxt[depth] == 4:
                pos[v] = -1
                depth -= 1
                continue
            w = nbr[v, nxt[depth]]
            nxt[depth] += 1
            if w < 0 or pos[w] >= 0:
                continue
            k = depth + 1
            sq = 0.0
            for i in range(k):
                L[k, i] = U[i, w]
                sq += L[k, i] * L[k, i]
            piv = G[w, w] - sq
            L[k, k] = math.sqrt(piv)
            for x in range(n):
                acc = G[w, x]
                for i in range(k):
                    acc -= L[k, i] * U[i, x]
                U[k, x] = acc / L[k, k]
            F[k] = F[depth] * piv * 0.25
            path[k] = w
            pos[w] = k
            nxt[k] = 0
            depth = k
            if tgt_adj[w]:
                _fomin_record(G, U, k + 1, pos, other_adj, F[k], out, s)
    return out


@nb.njit(cache=True)
def _fomin_record(G, U, k, pos, other_adj, weight, out, s):
    n = G.shape[0]
    for x in range(n):
        if pos[x] >= 0:
            continue
        tot = 0.0
        for y in range(n):
            if other_adj[y] == 0 or pos[y] >= 0:
                continue
            g = G[x, y]
            for i in range(k):
                g -= U[i, x] * U[i, y]
            tot += other_adj[y] * g
        out[s, x] += weight * tot


@dataclass(frozen=True)
class FominReport:
    lhs: float
    rhs: float
    rhs_hitting: float
    abs_error: float
    ok: bool


class FominTable:
    """Both sides of Fomin's identity for the targets 0 and 1 on ``K = A - {0, 1}``."""

    def __init__(self, A: LatticeDomain, max_box=MAX_ENUM_BOX):
        _check_box(A, max_box)
        if not {ORIGIN, ONE} <= A.vertices:
            raise ValueError("the domain must contain 0 and 1")
        self.domain = A
        K = A.vertices - {ORIGIN, ONE}
        if not K:
            raise ValueError("A - {0, 1} is empty")
        removed = frozenset({ORIGIN, ONE})
        G, pts = dense_green(A, removed)
        self.points = pts
        self.index = {p: i for i, p in enumerate(pts)}
        n = len(pts)
        nbr = np.full((n, 4), -1, dtype=np.int64)
        for i, (x, y) in enumerate(pts):
            for d, (dx, dy) in enumerate(STEPS):
                nbr[i, d] = self.index.get((x + dx, y + dy), -1)
        adj = {t: np.array([sum(1 for q in neighbors(p) if q == t) for p in pts], dtype=np.int64)
               for t in (ORIGIN, ONE)}
        starts = np.arange(n, dtype=np.int64)
        # lhs[t][s, x]: walks s -> t (loop-erased to a SAW eta) times walks x -> other target avoiding eta
        self.lhs = {}
        for t, o in ((ORIGIN, ONE), (ONE, ORIGIN)):
            out = np.zeros((n, n))
            _fomin_sums(nbr, G, starts, adj[t].astype(np.bool_), adj[o], out)
            self.lhs[t] = out
        self.G = G
        self.adj = adj
        # absorption probabilities at 0 and 1 for the walk killed on leaving K
        P = np.zeros((n, n))
        hit = {t: np.zeros(n) for t in (ORIGIN, ONE)}
        for i, p in enumerate(pts):
            for q in neighbors(p):
                if q in self.index:
                    P[i, self.index[q]] += 0.25
                elif q in hit:
                    hit[q][i] += 0.25
        M = np.eye(n) - P
        self.absorb = {t: np.linalg.solve(M, hit[t]) for t in hit}

    def _poisson(self, e: BoundaryEdge, t: Point) -> float:
        """``H_dK(e, t)``: enter through ``e``, walk in ``K``, stop on arrival at ``t``."""
        if e.inner in (ORIGIN, ONE):
            return 0.25 if e.inner == t else 0.0
        i = self.index[e.inner]
        return float(self.G[i] @ self.adj[t]) / 16.0

    def _poisson_hitting(self, e: BoundaryEdge, t: Point) -> float:
        if e.inner in (ORIGIN, ONE):
            return 0.25 if e.inner == t else 0.0
        return 0.25 * float(self.absorb[t][self.index[e.inner]])

    def lhs_value(self, a: BoundaryEdge, b: BoundaryEdge) -> float:
        def term(t, o):
            # first walk a -> t, second walk b -> o avoiding the loop erasure of the first
            if a.inner == t:
                return 0.25 * self._poisson(b, o)
            if a.inner == o:
                return 0.0
            if b.inner == o:
                # the second walk is the single step into o and never enters K
                return self._poisson(a, t) * 0.25
            if b.inner == t:
                return 0.0
            i, j = self.index[a.inner], self.index[b.inner]
            # two entry steps and two final steps
            return self.lhs[t][i, j] / 256.0

        return term(ORIGIN, ONE) - term(ONE, ORIGIN)

    def rhs_value(self, a: BoundaryEdge, b: BoundaryEdge) -> float:
        P = self._poisson
        return P(a, ORIGIN) * P(b, ONE) - P(a, ONE) * P(b, ORIGIN)

    def rhs_hitting(self, a: BoundaryEdge, b: BoundaryEdge) -> float:
        """Same determinant with kernels from absorption probabilities of the walk on ``K``."""
        P = self._poisson_hitting
        return P(a, ORIGIN) * P(b, ONE) - P(a, ONE) * P(b, ORIGIN)

    def check(self, a: BoundaryEdge, b: BoundaryEdge, tol: float = 1e-9) -> FominReport:
        """Agreement is measured relative to the larger of the two products in the determinant."""
        lhs, rhs, rh = self.lhs_value(a, b), self.rhs_value(a, b), self.rhs_hitting(a, b)
        P = self._poisson
        scale = max(abs(P(a, ORIGIN) * P(b, ONE)), abs(P(a, ONE) * P(b, ORIGIN)))
        err = abs(lhs - rhs) / scale if scale > 0 else abs(lhs - rhs)
        return FominReport(lhs, rhs, rh, err, err <= tol)

    def max_error(self) -> float:
        """Largest :meth:`check` error (and Green-vs-absorption gap) over ordered pairs of distinct edges."""
        edges = boundary_edges(self.domain)
        worst = 0.0
        for a in edges:
            for b in edges:
                if a == b:
                    continue
                r = self.check(a, b)
                P = self._poisson
                scale = max(abs(P(a, ORIGIN) * P(b, ONE)), abs(P(a, ONE) * P(b, ORIGIN)), 1e-300)
                worst = max(worst, r.abs_error, abs(r.rhs - r.rhs_hitting) / scale)
        return worst


def fomin_check(A: LatticeDomain, a: BoundaryEdge, b: BoundaryEdge, tol: float = 1e-9) -> FominReport:
    return FominTable(A).check(a, b, tol)


# Domain corpus -----------------------------------------------------------


@nb.njit(cache=True)
def _connected(mask, W, H):
    if mask == 0:
        return True
    start = 0
    while not (mask >> start) & 1:
        start += 1
    one = np.int64(1)
    seen = one << start
    frontier = seen
    colL = np.int64(0)
    colR = np.int64(0)
    for y in range(H):
        colL |= one << (y * W)
        colR |= one << (y * W + W - 1)
    while True:
        nbm = ((frontier << 1) & ~colL) | ((frontier >> 1) & ~colR) | (frontier << W) | (frontier >> W)
        nbm &= mask
        new = nbm & ~seen
        if new == 0:
            break
        seen |= new
        frontier = new
    return seen == mask


@nb.njit(cache=True)
def _corpus_scan(S, out):
    W = S + 2
    full = (np.int64(1) << (W * W)) - 1
    one = np.int64(1)
    count = 0
    for m in range(1 << (S * S)):
        left = False
        bottom = False
        for y in range(S):
            if (m >> (y * S)) & 1:
                left = True
        for x in range(S):
            if (m >> x) & 1:
                bottom = True
        if not (left and bottom):
            continue
        fm = np.int64(0)
        for y in range(S):
            for x in range(S):
                if (m >> (y * S + x)) & 1:
                    fm |= one << ((y + 1) * W + x + 1)
        if not _connected(fm, W, W):
            continue
        if not _connected(full & ~fm, W, W):
            continue
        for y in range(S - 1):
            for x in range(S - 1):
                blk = (one << (y * S + x)) | (one << (y * S + x + 1)) | (one << ((y + 1) * S + x)) | (one << ((y + 1) * S + x + 1))
                if (np.int64(m) & blk) == blk:
                    if count < out.shape[0]:
                        out[count, 0] = m
                        out[count, 1] = x
                        out[count, 2] = y
                    count += 1
    return count


def _corpus_masks(S: int) -> np.ndarray:
    """Rows ``(cell mask, x, y)``: a canonically placed shape and the position of its 2x2 block."""
    n = _corpus_scan(S, np.zeros((0, 3), dtype=np.int64))
    out = np.zeros((n, 3), dtype=np.int64)
    _corpus_scan(S, out)
    return out


def corpus_size(box: int) -> int:
    return len(_corpus_masks(box))


def iter_corpus(box: int):
    """Every simply connected domain with bounding box inside ``box x box`` containing 0, 1, -i, 1-i.

    Domains come in a fixed canonical order (by cell mask, then block position).
    """
    for m, bx, by in _corpus_masks(box).tolist():
        # block cell (bx, by) is -i; shift so that it lands on (0, -1)
        pts = [
            (x - bx, y - by - 1)
            for y in range(box)
            for x in range(box)
            if (m >> (y * box + x)) & 1
        ]
        yield validate_domain(pts)


# Compiled corpus sweep ---------------------------------------------------
#
# The same check as verify_domain, restricted to the identity, with every step
# compiled so that millions of small domains can be processed.  Paths through
# the edge [0, 1] are grown as two arms, one backwards from 0 and one forwards
# from 1, which visits far fewer partial paths than enumerating all SAWs.

_DX = np.array([s[0] for s in STEPS], dtype=np.int64)
_DY = np.array([s[1] for s in STEPS], dtype=np.int64)
_CUT_PREF = np.array([(0, -1), (-1, 0), (1, 0), (0, 1)], dtype=np.int64)


@nb.njit(cache=True)
def _mask_domain(m, bx, by, S):
    """Vertex coordinates, index grid (offset 2) and neighbour table of a corpus entry."""
    G = S + 4
    grid = np.full((G, G), -1, np.int64)
    xs = np.empty(S * S, np.int64)
    ys = np.empty(S * S, np.int64)
    n = 0
    # A.points order: sorted by (x, y)
    for x in range(S):
        for y in range(S):
            if (m >> (y * S + x)) & 1:
                xs[n] = x - bx
                ys[n] = y - by - 1
                grid[x + 2, y + 2] = n
                n += 1
    nbr = np.full((n, 4), -1, np.int64)
    for v in range(n):
        gx = xs[v] + bx + 2
        gy = ys[v] + by + 1 + 2
        for d in range(4):
            nbr[v, d] = grid[gx + _DX[d], gy + _DY[d]]
    return xs[:n], ys[:n], grid, nbr


@nb.njit(cache=True)
def _cut_signs(xs, ys, grid, nbr, bx, by):
    """Edge signs from the breadth-first branch cut (same rules as ``build_branch_cut``)."""
    n = xs.shape[0]
    G = grid.shape[0]
    ox = bx + 2  # grid column of x = 0
    oy = by + 3  # grid row of y = 0

    def at(x, y):
        gx, gy = x + ox, y + oy
        if gx < 0 or gy < 0 or gx >= G or gy >= G:
            return -1
        return grid[gx, gy]

    def interior(i, j):
        return at(i, j) >= 0 and at(i + 1, j) >= 0 and at(i, j - 1) >= 0 and at(i + 1, j - 1) >= 0

    # dual points (i, j) stored with offset D in a (2D+1)^2 box
    D = G
    W = 2 * D + 1
    par = np.full(W * W, -2, np.int64)
    start = D * W + D
    par[start] = -1
    frontier = np.empty(W * W, np.int64)
    nxt = np.empty(W * W, np.int64)
    targets = np.empty(W * W, np.int64)
    frontier[0] = start
    nf = 1
    nt = 0
    while nf > 0 and nt == 0:
        nn = 0
        for f in range(nf):
            c = frontier[f]
            ci, cj = c // W - D, c % W - D
            for k in range(4):
                ei, ej = ci + _CUT_PREF[k, 0], cj + _CUT_PREF[k, 1]
                if ci == 0 and cj == 0 and ei == 0 and ej == 1:
                    continue
                e = (ei + D) * W + (ej + D)
                if par[e] != -2:
                    continue
                par[e] = c
                if interior(ei, ej):
                    nxt[nn] = e
                    nn += 1
                else:
                    targets[nt] = e
                    nt += 1
        for f in range(nn):
            frontier[f] = nxt[f]
        nf = nn
    best = targets[0]
    for t in range(1, nt):
        e = targets[t]
        ei, ej = e // W - D, e % W - D
        bi, bj = best // W - D, best % W - D
        if ej < bj or (ej == bj and ei < bi):
            best = e
    sgn = np.ones((n, 4), np.float64)
    c = best
    while par[c] != -1:
        p = par[c]
        pi, pj = p // W - D, p % W - D
        ci, cj = c // W - D, c % W - D
        if pj == cj:  # vertical primal edge at x = max(pi, ci)
            x = max(pi, ci)
            u, w = at(x, pj), at(x, pj - 1)
        else:  # horizontal primal edge at y = min(pj, cj)
            y = min(pj, cj)
            u, w = at(pi, y), at(pi + 1, y)
        if u >= 0 and w >= 0:
            for d in range(4):
                if nbr[u, d] == w:
                    sgn[u, d] = -1.0
                if nbr[w, d] == u:
                    sgn[w, d] = -1.0
        c = p
    return sgn


@nb.njit(cache=True)
def _two_arm_sums(nbr, G, u0, u1, is_end, W):
    """``W[s, t] += 4^-k det G[eta, eta]`` over SAWs ``s -> ... -> 0 -> 1 -> ... -> t``."""
    n = nbr.shape[0]
    L = np.zeros((n, n))
    path = np.empty(n, np.int64)
    nxt = np.empty(n, np.int64)
    on = np.zeros(n, np.bool_)
    F = np.empty(n)
    # first arm grows from 0 (its far end is the entry vertex), 1 is reserved
    path[0] = u0
    on[u0] = True
    on[u1] = True
    nxt[0] = 0
    L[0, 0] = math.sqrt(G[u0, u0])
    F[0] = G[u0, u0]
    d0 = 0
    fresh = True
    while d0 >= 0:
        if fresh:
            fresh = False
            s = path[d0]
            if is_end[s]:
                # second arm from 1 at depth d0 + 1
                base = d0 + 1
                k = base
                sq = 0.0
                for i in range(k):
                    acc = G[path[i], u1]
                    for j in range(i):
                        acc -= L[i, j] * L[k, j]
                    L[k, i] = acc / L[i, i]
                    sq += L[k, i] * L[k, i]
                piv = G[u1, u1] - sq
                L[k, k] = math.sqrt(piv)
                F[k] = F[k - 1] * piv * 0.25
                path[k] = u1
                nxt[k] = 0
                if is_end[u1]:
                    W[s, u1] += F[k]
                d1 = k
                while d1 >= base:
                    v = path[d1]
                    if nxt[d1] == 4:
                        if d1 > base:
                            on[v] = False
                        d1 -= 1
                        continue
                    w = nbr[v, nxt[d1]]
                    nxt[d1] += 1
                    if w < 0 or on[w]:
                        continue
                    k = d1 + 1
                    sq = 0.0
                    for i in range(k):
                        acc = G[path[i], w]
                        for j in range(i):
                            acc -= L[i, j] * L[k, j]
                        L[k, i] = acc / L[i, i]
                        sq += L[k, i] * L[k, i]
                    piv = G[w, w] - sq
                    L[k, k] = math.sqrt(piv)
                    F[k] = F[d1] * piv * 0.25
                    path[k] = w
                    on[w] = True
                    nxt[k] = 0
                    d1 = k
                    if is_end[w]:
                        W[s, w] += F[k]
        v = path[d0]
        if nxt[d0] == 4:
            if d0 > 0:
                on[v] = False
            d0 -= 1
            continue
        w = nbr[v, nxt[d0]]
        nxt[d0] += 1
        if w < 0 or on[w]:
            continue
        k = d0 + 1
        sq = 0.0
        for i in range(k):
            acc = G[path[i], w]
            for j in range(i):
                acc -= L[i, j] * L[k, j]
            L[k, i] = acc / L[i, i]
            sq += L[k, i] * L[k, i]
        piv = G[w, w] - sq
        L[k, k] = math.sqrt(piv)
        F[k] = F[d0] * piv * 0.25
        path[k] = w
        on[w] = True
        nxt[k] = 0
        d0 = k
        fresh = True
    return W


@nb.njit(cache=True)
def _sub_inverse(M, keep):
    k = keep.shape[0]
    S = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            S[i, j] = M[keep[i], keep[j]]
    return np.linalg.inv(S)


@nb.njit(cache=True)
def _verify_entry(m, bx, by, S):
    """Largest identity discrepancy over ordered pairs of distinct boundary edges of one domain."""
    xs, ys, grid, nbr = _mask_domain(m, bx, by, S)
    n = xs.shape[0]
    u0 = grid[bx + 2, by + 3]
    u1 = grid[bx + 3, by + 3]
    sgn = _cut_signs(xs, ys, grid, nbr, bx, by)
    M = np.eye(n)
    Mq = np.eye(n)
    for v in range(n):
        for d in range(4):
            w = nbr[v, d]
            if w >= 0:
                M[v, w] -= 0.25
                Mq[v, w] -= 0.25 * sgn[v, d]
    G = np.linalg.inv(M)
    G = 0.5 * (G + G.T)
    Gq = np.linalg.inv(Mq)
    _, ld = np.linalg.slogdet(M)
    _, ldq = np.linalg.slogdet(Mq)
    e2m = math.exp(ldq - ld)
    qb = 0.25 * (Gq[u0, u0] * Gq[u1, u1] - Gq[u0, u1] * Gq[u1, u0])
    keep = np.empty(n - 2, np.int64)
    kpos = np.full(n, -1, np.int64)
    c = 0
    for v in range(n):
        if v != u0 and v != u1:
            keep[c] = v
            kpos[v] = c
            c += 1
    GqK = _sub_inverse(Mq, keep)
    GK = _sub_inverse(M, keep)
    # boundary edges
    ne = 0
    ev = np.empty(4 * n, np.int64)
    for v in range(n):
        for d in range(4):
            if nbr[v, d] < 0:
                ev[ne] = v
                ne += 1
    ev = ev[:ne]
    R = np.zeros((2, ne))
    U = np.zeros((2, ne))
    for zi in range(2):
        z = u0 if zi == 0 else u1
        for e in range(ne):
            v = ev[e]
            r = 0.25 if v == z else 0.0
            u = r
            if kpos[v] >= 0:
                for d in range(4):
                    y = nbr[z, d]
                    if y >= 0 and kpos[y] >= 0:
                        r += 0.0625 * sgn[z, d] * GqK[kpos[y], kpos[v]]
                        u += 0.0625 * GK[kpos[y], kpos[v]]
            R[zi, e] = r
            U[zi, e] = u
    is_end = np.zeros(n, np.bool_)
    for e in range(ne):
        is_end[ev[e]] = True
    Wp = np.zeros((n, n))
    _two_arm_sums(nbr, G, u0, u1, is_end, Wp)
    worst = 0.0
    for i in range(ne):
        for j in range(ne):
            if i == j:
                continue
            a, b = ev[i], ev[j]
            H = G[a, b] / 16.0
            exact = (Wp[a, b] + Wp[b, a]) / 16.0 / H
            pref = qb * e2m / H
            rhs = pref * abs(R[0, i] * R[1, j] - R[0, j] * R[1, i])
            size = pref * (U[0, i] * U[1, j] + U[0, j] * U[1, i])
            if exact > 0:
                err = abs(exact - rhs) / max(exact, rhs)
            elif size > 0:
                err = rhs / size
            else:
                err = 0.0
            if err > worst:
                worst = err
    return worst, ne * (ne - 1)


@nb.njit(cache=True)
def _verify_block(entries, S, errs, pairs):
    for r in range(entries.shape[0]):
        e, p = _verify_entry(entries[r, 0], entries[r, 1], entries[r, 2], S)
        errs[r] = e
        pairs[r] = p


@dataclass(frozen=True)
class SweepReport:
    box: int
    total: int
    verified: int
    pairs: int
    max_rel_error: float
    failures: int
    elapsed: float
    complete: bool
    # per-domain rows (cell mask, block x, block y, pairs, max relative error) when requested
    instances: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.complete and self.failures == 0


def sweep_corpus(
    box: int, tol: float = 1e-9, budget: float | None = None, chunk: int = 2000, keep: bool = False
) -> SweepReport:
    """Check the identity on every corpus domain in canonical order, stopping when ``budget`` seconds run out."""
    import time

    t0 = time.perf_counter()
    entries = _corpus_masks(box)
    total = len(entries)
    done = pairs = fails = 0
    worst = 0.0
    all_errs = np.zeros(total)
    all_pairs = np.zeros(total, dtype=np.int64)
    for lo in range(0, total, chunk):
        if budget is not None and time.perf_counter() - t0 > budget:
            break
        block = np.ascontiguousarray(entries[lo : lo + chunk])
        errs = np.zeros(len(block))
        npairs = np.zeros(len(block), dtype=np.int64)
        _verify_block(block, box, errs, npairs)
        all_errs[lo : lo + len(block)] = errs
        all_pairs[lo : lo + len(block)] = npairs
        done += len(block)
        pairs += int(npairs.sum())
        fails += int(np.sum(errs > tol))
        worst = max(worst, float(errs.max()))
    rows = None
    if keep:
        rows = np.column_stack([entries[:done], all_pairs[:done], all_errs[:done]])
    return SweepReport(box, total, done, pairs, worst, fails, time.perf_counter() - t0, done == total, rows)


def corpus_entry_domain(entry, box: int) -> LatticeDomain:
    m, bx, by = (int(v) for v in entry)
    return validate_domain(
        [(x - bx, y - by - 1) for y in range(box) for x in range(box) if (m >> (y * box + x)) & 1]
    )
