import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lerwgreen import harmonic as hc
from lerwgreen import lerw
from lerwgreen.domain import (
    BoundaryEdge,
    EdgeSignTable,
    Walk,
    boundary_edges,
    build_branch_cut,
    named_edge,
    rotate_edge,
    square,
    validate_domain,
)

ZERO = validate_domain([(0, 0)])


# Loop erasure ------------------------------------------------------------


def test_loop_erase_examples():
    assert lerw.loop_erase([(0, 0), (1, 0), (1, 1), (1, 0), (0, 0), (0, 1)]).points == ((0, 0), (0, 1))
    assert lerw.loop_erase([(0, 0), (1, 0), (0, 0), (1, 0), (1, 1)]).points == ((0, 0), (1, 0), (1, 1))
    saw = [(0, 0), (1, 0), (1, 1), (2, 1)]
    assert lerw.loop_erase(saw).points == tuple(saw)


walks = st.lists(st.sampled_from([(1, 0), (-1, 0), (0, 1), (0, -1)]), min_size=0, max_size=60).map(
    lambda steps: list(itertools.accumulate(steps, lambda p, s: (p[0] + s[0], p[1] + s[1]), initial=(0, 0)))
)


@given(walks)
def test_loop_erase_properties(pts):
    le = lerw.loop_erase(pts)
    assert le.is_self_avoiding()
    assert len(le) <= len(pts) - 1
    assert le.points[0] == pts[0] and le.points[-1] == pts[-1]
    steps = {frozenset(e) for e in zip(pts, pts[1:])}
    assert all(frozenset(e) in steps for e in zip(le.points, le.points[1:]))
    assert lerw.loop_erase(le).points == le.points


# Random numbers and sampling --------------------------------------------


def test_streams_are_counter_based():
    a = lerw.uniforms(7, 3, 5)
    assert np.array_equal(a, lerw.uniforms(7, 3, 5))
    assert not np.array_equal(a, lerw.uniforms(7, 4, 5))
    assert np.all((a >= 0) & (a < 1))


def test_conditioned_walk_trivial_domain():
    edges = boundary_edges(ZERO)
    rng = np.random.default_rng(0)
    for a, b in itertools.permutations(edges, 2):
        w = lerw.sample_conditioned_walk(ZERO, a, b, rng)
        assert w.points == (a.outer, (0, 0), b.outer)


def test_conditioned_walk_exits_at_b():
    A = square(4)
    a, b = named_edge(4, "left-mid"), named_edge(4, "top-mid")
    rng = np.random.default_rng(1)
    for _ in range(200):
        w = lerw.sample_conditioned_walk(A, a, b, rng)
        assert w.points[0] == a.outer and w.points[1] == a.inner
        assert w.points[-2:] == (b.inner, b.outer)
        assert all(p in A.vertices for p in w.points[1:-1])


def test_free_walk_exit_distribution():
    A = square(4)
    start = named_edge(4, "left-mid").inner
    N = 10**6
    counts, _, _ = lerw.simulate_free_walks(A, start, N, seed=9)
    edges = boundary_edges(A)
    p = np.array([hc.interior_poisson(A, start, b) for b in edges])
    obs = np.array([counts[b] for b in edges])
    chi2 = float(np.sum((obs - N * p) ** 2 / (N * p)))
    dof = len(edges) - 1
    assert chi2 <= dof + 4 * math.sqrt(2 * dof)


def test_mc_matches_exact_square2():
    A = square(2)
    a, b = named_edge(2, "right-mid"), named_edge(2, "left-mid")
    est = lerw.mc_edge_probability(A, a, b, 100_000, seed=7, workers=1)
    exact = lerw.exact_edge_probability(A, a, b)
    assert 0 <= est.mean <= 1
    assert est.stderr == pytest.approx(math.sqrt(est.mean * (1 - est.mean) / est.samples))
    assert abs(est.mean - exact) <= 3 * est.stderr
    b2 = named_edge(2, "top-mid")
    est2 = lerw.mc_edge_probability(A, a, b2, 100_000, seed=8, workers=1)
    assert abs(est2.mean - lerw.exact_edge_probability(A, a, b2)) <= 3 * est2.stderr


def test_mc_independent_of_workers():
    A = square(3)
    a, b = named_edge(3, "right-mid"), named_edge(3, "bottom-mid")
    one = lerw.mc_edge_probability(A, a, b, 20_000, seed=123, workers=1)
    eight = lerw.mc_edge_probability(A, a, b, 20_000, seed=123, workers=8)
    assert one == eight


def test_mc_rejects_bad_conditioning():
    A = square(2)
    a = named_edge(2, "right-mid")
    with pytest.raises(ValueError):
        lerw.mc_edge_probability(A, a, a, 10, seed=0)


# Exact sums --------------------------------------------------------------


def test_enumeration_size_guard():
    with pytest.raises(lerw.TooLarge):
        lerw.SawSums(square(3))


def test_partition_and_range_square2():
    A = square(2)
    sums = lerw.SawSums(A)
    for a, b in itertools.permutations(boundary_edges(A), 2):
        H = hc.boundary_poisson(A, a, b)
        assert sums.total(a, b) == pytest.approx(H, rel=1e-10)
        P = (sums.plus(a, b) + sums.minus(a, b)) / H
        assert 0 <= P < 1


def test_edge_probability_hand_domain():
    # A = {0, 1}: the only walks a -> b are SAWs of at most two interior vertices
    A = validate_domain([(0, 0), (1, 0)])
    a, b = BoundaryEdge((0, 0), (-1, 0)), BoundaryEdge((1, 0), (2, 0))
    # the walk must use [0, 1] to get from 0 to 1, so P = 1
    assert lerw.exact_edge_probability(A, a, b) == pytest.approx(1.0)


def test_identity_square2_all_pairs():
    r = lerw.verify_domain(square(2))
    assert r.pairs == 16 * 15
    assert r.ok, r


def _image(b, f):
    return BoundaryEdge(f(b.inner), f(b.outer))


def test_identity_symmetric_pairs():
    # x -> 1 - x maps square:2 to itself and the edge [0, 1] to itself
    A = square(2)
    flip = lambda p: (1 - p[0], p[1])
    a, b = named_edge(2, "right-mid"), named_edge(2, "top-mid")
    assert lerw.identity_rhs(A, a, b) == pytest.approx(lerw.identity_rhs(A, _image(a, flip), _image(b, flip)), rel=1e-12)
    # a half turn about the midpoint of [0, 1] preserves this 4 x 5 block
    B = validate_domain([(x, y) for x in range(-1, 3) for y in range(-2, 3)])
    turn = lambda p: (1 - p[0], -p[1])
    for a, b in list(itertools.permutations(boundary_edges(B), 2))[::13]:
        r1 = lerw.identity_rhs(B, a, b)
        r2 = lerw.identity_rhs(B, _image(a, turn), _image(b, turn))
        assert r1 == pytest.approx(r2, rel=1e-12, abs=1e-18)


def test_identity_square8_against_mc():
    A = square(8)
    a, b = named_edge(8, "right-mid"), named_edge(8, "left-mid")
    rhs = lerw.identity_rhs(A, a, b)
    est = lerw.mc_edge_probability(A, a, b, 10**6, seed=2024, workers=1)
    assert abs(est.mean - rhs) <= 3 * est.stderr


def test_identity_cut_independent():
    A = square(2)
    down = build_branch_cut(A)
    right = EdgeSignTable.from_path(A, [(0, 0), (1, 0), (2, 0)])
    edges = boundary_edges(A)
    r1, _ = lerw.identity_terms(A, edges, down)
    r2, _ = lerw.identity_terms(A, edges, right)
    assert np.allclose(r1, r2, rtol=1e-9, atol=0)


@pytest.mark.parametrize("k", range(0, 11665, 1297))
def test_identity_corpus_sample(k):
    entry = lerw._corpus_masks(4)[k]
    A = lerw.corpus_entry_domain(entry, 4)
    assert lerw.verify_domain(A).ok


def test_compiled_sweep_matches_python_path():
    rep = lerw.sweep_corpus(3)
    assert rep.complete and rep.ok
    assert rep.total == sum(1 for _ in lerw.iter_corpus(3))


def _brute_corpus_size(S):
    """Count shapes touching the left and bottom sides of the box, times their 2x2 blocks."""

    def comps(cells):
        cells = set(cells)
        n = 0
        while cells:
            stack = [cells.pop()]
            while stack:
                x, y = stack.pop()
                for q in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                    if q in cells:
                        cells.remove(q)
                        stack.append(q)
            n += 1
        return n

    grid = [(x, y) for y in range(S) for x in range(S)]
    frame = {(x, y) for x in range(-1, S + 1) for y in range(-1, S + 1)}
    total = 0
    for m in range(1, 1 << (S * S)):
        cells = {grid[i] for i in range(S * S) if (m >> i) & 1}
        if min(x for x, _ in cells) != 0 or min(y for _, y in cells) != 0:
            continue
        if comps(cells) != 1 or comps(frame - cells) != 1:
            continue
        total += sum(
            {(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)} <= cells for x in range(S - 1) for y in range(S - 1)
        )
    return total


@pytest.mark.parametrize("S", [2, 3, 4])
def test_corpus_size_brute_force(S):
    assert lerw.corpus_size(S) == _brute_corpus_size(S)


# Prescribed walks --------------------------------------------------------


def test_split_edge_matches_enumeration():
    for k in (0, 500, 4000, 9000):
        A = lerw.corpus_entry_domain(lerw._corpus_masks(4)[k], 4)
        sums = lerw.SawSums(A)
        for a, b in list(itertools.permutations(boundary_edges(A), 2))[::7]:
            plus, minus = lerw.identity_split(A, a, b, [(0, 0), (1, 0)], strict=False)
            # pairs with no walk through the edge are judged against all walks a -> b
            scale = max(sums.plus(a, b), sums.minus(a, b)) or sums.total(a, b)
            assert plus == pytest.approx(sums.plus(a, b), abs=1e-9 * scale)
            assert minus == pytest.approx(sums.minus(a, b), abs=1e-9 * scale)
            num = lerw.identity_rhs(A, a, b) * hc.boundary_poisson(A, a, b)
            assert plus + minus == pytest.approx(num, rel=1e-9, abs=1e-9 * scale)


@pytest.mark.parametrize(
    "lam,strict",
    [([(0, 0), (1, 0)], True), ([(0, -1), (0, 0), (1, 0)], True), ([(0, 0), (1, 0), (1, 1)], False)],
)
def test_split_longer_walks_square2(lam, strict):
    A = square(2)
    sums = lerw.SawSums(A, pattern=lam)
    for a, b in itertools.permutations(boundary_edges(A), 2):
        plus, minus = lerw.identity_split(A, a, b, lam, strict=strict)
        assert plus >= -1e-15 and minus >= -1e-15
        scale = max(sums.plus(a, b), sums.minus(a, b)) or sums.total(a, b)
        assert abs(plus - sums.plus(a, b)) <= 1e-9 * scale
        assert abs(minus - sums.minus(a, b)) <= 1e-9 * scale


def test_split_rejects_boundary_walk():
    A = square(2)
    a, b = named_edge(2, "right-mid"), named_edge(2, "left-mid")
    with pytest.raises(lerw.LambdaNotInterior):
        lerw.identity_split(A, a, b, [(0, 0), (1, 0), (1, 1)])
    with pytest.raises(lerw.LambdaNotInterior):
        lerw.identity_split(A, a, b, [(1, 0), (0, 0)])


# Fomin -------------------------------------------------------------------


def test_fomin_square2():
    A = square(2)
    ft = lerw.FominTable(A)
    assert ft.max_error() <= 1e-9
    for a, b in list(itertools.permutations(boundary_edges(A), 2))[::11]:
        r = ft.check(a, b)
        assert r.ok
        scale = max(abs(r.rhs), 1e-300)
        assert abs(r.rhs - r.rhs_hitting) <= 1e-10 * max(scale, 1e-3 * abs(ft._poisson(a, (0, 0))))
        # swapping the two targets is a row swap of the determinant
        assert ft.rhs_value(b, a) == pytest.approx(-r.rhs, abs=1e-18)


@pytest.mark.parametrize("k", [1, 77, 2500, 11000])
def test_fomin_corpus_sample(k):
    A = lerw.corpus_entry_domain(lerw._corpus_masks(4)[k], 4)
    assert lerw.FominTable(A).max_error() <= 1e-9
