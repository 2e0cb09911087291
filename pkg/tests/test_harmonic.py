import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lerwgreen import harmonic as hc
from lerwgreen.domain import (
    BoundaryEdge,
    EdgeSignTable,
    OutOfDomain,
    boundary_edges,
    build_branch_cut,
    named_edge,
    square,
    validate_domain,
)
from lerwgreen.lerw import simulate_free_walks

ZERO = validate_domain([(0, 0)])
PAIR = validate_domain([(0, 0), (1, 0)])
BLOCK = validate_domain([(0, 0), (1, 0), (0, -1), (1, -1)])
NO_CUT = EdgeSignTable(((0, 0),))


def test_green_small_domains():
    assert hc.green(ZERO, (0, 0), (0, 0)) == pytest.approx(1.0, abs=1e-15)
    # bounces 0 -> 1 -> 0 form a geometric series with ratio 1/16
    assert hc.green(PAIR, (0, 0), (0, 0)) == pytest.approx(16 / 15, rel=1e-14)
    assert hc.green(PAIR, (0, 0), (1, 0)) == pytest.approx(4 / 15, rel=1e-14)
    with pytest.raises(OutOfDomain):
        hc.green(PAIR, (0, 0), (5, 5))


def test_green_symmetric_and_dominates_signed():
    A = square(4)
    t = build_branch_cut(A)
    G = hc.green_table(A).solve(np.eye(len(A)))
    Gq = hc.green_table(A, t).solve(np.eye(len(A)))
    assert np.allclose(G, G.T, atol=1e-14)
    assert G.min() > 0
    assert np.all(np.abs(Gq) <= G + 1e-13)


def test_interior_poisson_rows_sum_to_one():
    A = square(4)
    edges = boundary_edges(A)
    for z in A.points:
        assert sum(hc.interior_poisson(A, z, b) for b in edges) == pytest.approx(1.0, abs=1e-12)
    for b in boundary_edges(ZERO):
        assert hc.interior_poisson(ZERO, (0, 0), b) == 0.25


def test_interior_poisson_matches_walks():
    A = square(4)
    b = named_edge(4, "right-mid")
    N = 10**6
    counts, _, _ = simulate_free_walks(A, (0, 0), N, seed=3)
    p = hc.interior_poisson(A, (0, 0), b)
    freq = counts[b] / N
    assert abs(freq - p) <= 4 * math.sqrt(p * (1 - p) / N)


def test_green_matches_visit_counts():
    A = square(3)
    _, mean, se = simulate_free_walks(A, (0, 0), 200_000, seed=5, target=(1, 0))
    assert abs(mean - hc.green(A, (0, 0), (1, 0))) <= 4 * se


def test_boundary_poisson():
    edges = boundary_edges(ZERO)
    for a, b in itertools.permutations(edges, 2):
        assert hc.boundary_poisson(ZERO, a, b) == pytest.approx(1 / 16)
    A = square(4)
    edges = boundary_edges(A)
    H = hc.boundary_poisson_matrix(A, edges)
    assert np.allclose(H, H.T, atol=1e-15)
    assert np.allclose(H.sum(axis=1), 0.25, atol=1e-13)


def test_signed_exit_three_vertex_domain():
    A = validate_domain([(0, 0), (1, 0), (-1, 0)])
    a = BoundaryEdge((0, 0), (0, 1))
    assert hc.signed_exit(A, NO_CUT, (0, 0), a) == pytest.approx(0.25)


def test_signed_exit_bounded_by_poisson():
    A = square(4)
    t = build_branch_cut(A)
    edges = boundary_edges(A)
    for z in A.points[::3]:
        R = hc.signed_exit_row(A, t, z, edges)
        H = np.array([hc.interior_poisson(A, z, b) for b in edges])
        assert np.all(np.abs(R) <= H + 1e-14)


def test_signed_exit_truncated_path_sum():
    """Signed walk sums from 0 avoiding {0, 1}, truncated by length and propagated step by step.

    The spectral radius of the walk on ``A - {0, 1}`` is about 0.672, so walks
    up to length 64 leave a tail below 1e-9.
    """
    A = square(2)
    t = build_branch_cut(A)
    K = [p for p in A.points if p not in ((0, 0), (1, 0))]
    idx = {p: i for i, p in enumerate(K)}
    Q = np.zeros((len(K), len(K)))
    for p in K:
        for q in ((p[0] + 1, p[1]), (p[0] - 1, p[1]), (p[0], p[1] + 1), (p[0], p[1] - 1)):
            if q in idx:
                Q[idx[p], idx[q]] = 0.25 * t.sign(p, q)
    rho = max(abs(np.linalg.eigvalsh(Q)))
    L = 64
    # |v Q^k e| <= |v| rho^k with |v| <= 1/2 and the exit step weighing 1/4
    tail = 0.125 * rho ** (L - 1) / (1 - rho)
    assert tail < 1e-9
    for a in boundary_edges(A):
        s_a = 0.25 * t.sign(a.inner, a.outer)
        total = s_a if a.inner == (0, 0) else 0.0
        if a.inner in idx:
            # walks 0 -> y (one step) then inside K to a-, length at most L
            v = np.zeros(len(K))
            for y in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                if y in idx:
                    v[idx[y]] += 0.25 * t.sign((0, 0), y)
            for _ in range(L - 1):
                total += v[idx[a.inner]] * s_a
                v = v @ Q
        assert hc.signed_exit(A, t, (0, 0), a) == pytest.approx(total, abs=tail + 1e-15)


def _closed_walks(A, L, table=None):
    """``sum_k tr(P^k)/k`` for ``k <= L`` counted by explicit walk enumeration."""
    pts = A.points
    total = 0.0
    for start in pts:
        # weights of walks of each length ending at each vertex, grown step by step
        frontier = {(start, 1.0)}
        layer = {start: 1.0}
        for k in range(1, L + 1):
            nxt = {}
            for p, w in layer.items():
                for q in ((p[0] + 1, p[1]), (p[0] - 1, p[1]), (p[0], p[1] + 1), (p[0], p[1] - 1)):
                    if q in A.vertices:
                        s = 1 if table is None else table.sign(p, q)
                        nxt[q] = nxt.get(q, 0.0) + 0.25 * s * w
            layer = nxt
            total += layer.get(start, 0.0) / k
        del frontier
    return total


def test_log_det_small_domains():
    assert hc.log_det_i_minus_p(ZERO) == pytest.approx(0.0, abs=1e-15)
    t = build_branch_cut(square(2))
    for table in (None, NO_CUT):
        assert math.exp(hc.log_det_i_minus_p(PAIR, table)) == pytest.approx(15 / 16, rel=1e-14)
    # -log det(I - P) is the total loop mass; the 4-cycle has spectral radius 1/2
    mass = _closed_walks(BLOCK, 12)
    tail = 4 * sum(0.5**k / k for k in range(13, 200))
    assert abs(-hc.log_det_i_minus_p(BLOCK) - mass) <= tail


def test_odd_loop_mass_small_domains():
    m, e2m = hc.odd_loop_mass(PAIR, NO_CUT)
    assert e2m == pytest.approx(1.0, abs=1e-14)
    t = build_branch_cut(BLOCK)
    m, e2m = hc.odd_loop_mass(BLOCK, t)
    assert e2m > 1
    diff = _closed_walks(BLOCK, 16) - _closed_walks(BLOCK, 16, t)
    tail = 2 * 4 * sum(0.5**k / k for k in range(17, 200))
    assert abs(2 * m - diff) <= tail


def test_loop_factor():
    A = square(4)
    assert hc.loop_factor([(0, 0)], ZERO) == 1.0
    rng = np.random.default_rng(2)
    for _ in range(5):
        z = A.points[rng.integers(len(A))]
        assert hc.loop_factor([z], A) == pytest.approx(hc.green(A, z, z), rel=1e-13)
    V = [(0, 0), (2, 1), (-1, -2)]
    ref = hc.loop_factor(V, A)
    for perm in itertools.permutations(V):
        assert hc.loop_factor(list(perm), A) == pytest.approx(ref, rel=1e-10)
    # determinant form of the same product
    idx = [A.index[v] for v in V]
    G = hc.green_table(A).solve(np.eye(len(A)))
    assert np.linalg.det(G[np.ix_(idx, idx)]) == pytest.approx(ref, rel=1e-10)


def test_qbar():
    assert hc.qbar(PAIR, NO_CUT) == pytest.approx(4 / 15, rel=1e-14)
    for n in (2, 3, 5):
        A = square(n)
        t = build_branch_cut(A)
        bound = 0.25 * hc.loop_factor([(0, 0), (1, 0)], A)
        assert hc.qbar(A, t) <= bound + 1e-15


@pytest.mark.parametrize("n", [2, 3, 4, 6])
def test_signed_determinant_dominates(n):
    A = square(n)
    t = build_branch_cut(A)
    assert hc.log_det_i_minus_p(A, t) > hc.log_det_i_minus_p(A)


def test_no_enclosing_cycle_gives_equal_determinants():
    # a tree-shaped domain containing the 2x2 block only as an L: no cycle around w0
    A = validate_domain([(0, 0), (1, 0), (0, -1), (-1, 0), (0, 1)])
    assert hc.log_det_i_minus_p(A, NO_CUT) == pytest.approx(hc.log_det_i_minus_p(A), abs=1e-15)


@given(st.integers(2, 6), st.integers(0, 10**6))
def test_green_residual(n, k):
    A = square(n)
    gt = hc.green_table(A)
    w = A.points[k % len(A)]
    e = np.zeros(len(A))
    e[gt.index[w]] = 1.0
    assert np.max(np.abs(gt.matrix @ gt.column(w) - e)) <= 1e-12
