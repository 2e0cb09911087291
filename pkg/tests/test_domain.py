import numpy as np
import pytest
from hypothesis import given, strategies as st

from lerwgreen.domain import (
    BoundaryEdge,
    ComplementDisconnected,
    Disconnected,
    EdgeSignTable,
    MissingOrigin,
    SizeTooSmall,
    BranchPointOnBoundary,
    NotALoop,
    EdgeOutsideDomain,
    boundary_edges,
    build_branch_cut,
    edge,
    loop_sign,
    named_edge,
    parity_between,
    rotate_edge,
    slit_square,
    square,
    standard_domain,
    validate_domain,
    winding_number,
)


def ring(r):
    return [(x, y) for x in range(-r, r + 1) for y in range(-r, r + 1) if max(abs(x), abs(y)) == r]


def test_single_vertex():
    A = validate_domain([(0, 0)])
    assert len(A) == 1
    assert len(boundary_edges(A)) == 4


def test_rejections():
    with pytest.raises(MissingOrigin):
        validate_domain(ring(1) + ring(2))
    with pytest.raises(Disconnected):
        validate_domain([(0, 0)] + ring(2))
    full = [(x, y) for x in range(-2, 3) for y in range(-2, 3) if (x, y) != (1, 1)]
    with pytest.raises(ComplementDisconnected):
        validate_domain(full)


def test_standard_constructors():
    A = standard_domain("square:2")
    assert len(A) == 16
    xs = [p[0] for p in A.points]
    ys = [p[1] for p in A.points]
    # D_A is the union of unit squares centred at the vertices
    assert ((min(xs) - 0.5 + max(xs) + 0.5) / 2, (min(ys) - 0.5 + max(ys) + 0.5) / 2) == (0.5, -0.5)
    assert standard_domain("rect:3x3").vertices == {(1, 1), (1, 2), (2, 1), (2, 2)}
    U = slit_square(2)
    # U_2 is the 3x3 block and the slit {0, 1, 2} meets it in two points
    assert U.vertices == {(x, y) for x in range(-1, 2) for y in range(-1, 2)} - {(0, 0), (1, 0)}
    with pytest.raises(SizeTooSmall):
        square(1)


@pytest.mark.parametrize("n", [2, 3, 5, 8])
def test_square_boundary_count(n):
    assert len(boundary_edges(square(n))) == 8 * n


def test_two_vertex_boundary():
    A = validate_domain([(0, 0), (1, 0)])
    assert len(boundary_edges(A)) == 6


@given(st.sets(st.tuples(st.integers(-2, 2), st.integers(-2, 2)), min_size=1, max_size=12))
def test_boundary_edges_brute_force(cells):
    cells = set(cells) | {(0, 0)}
    try:
        A = validate_domain(cells)
    except Exception:
        return
    brute = sorted(
        (p, (p[0] + dx, p[1] + dy))
        for p in cells
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1))
        if (p[0] + dx, p[1] + dy) not in cells
    )
    got = sorted((b.inner, b.outer) for b in boundary_edges(A))
    assert got == brute
    mids = [b.midpoint for b in boundary_edges(A)]
    assert mids == sorted(mids)


def _flood_ok(cells):
    """Independent connectivity oracle on the framed bounding box."""
    xs = [p[0] for p in cells]
    ys = [p[1] for p in cells]
    box = {(x, y) for x in range(min(xs) - 1, max(xs) + 2) for y in range(min(ys) - 1, max(ys) + 2)}

    def comps(S):
        S = set(S)
        n = 0
        while S:
            stack = [S.pop()]
            while stack:
                x, y = stack.pop()
                for q in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                    if q in S:
                        S.remove(q)
                        stack.append(q)
            n += 1
        return n

    return comps(cells) == 1 and comps(box - cells) == 1


@given(st.sets(st.tuples(st.integers(-2, 2), st.integers(-2, 2)), min_size=1, max_size=16))
def test_validate_matches_flood_fill(cells):
    cells = set(cells) | {(0, 0)}
    try:
        validate_domain(cells)
        accepted = True
    except (Disconnected, ComplementDisconnected):
        accepted = False
    assert accepted == _flood_ok(cells)


@pytest.mark.parametrize("n", [2, 4, 7])
def test_square_cut_is_straight_down(n):
    A = square(n)
    t = build_branch_cut(A)
    assert t.cut_path == tuple((0, -k) for k in range(n + 1))
    assert t.crossed_edges == {edge((0, -k), (1, -k)) for k in range(1, n + 1)}
    assert t.sign((0, 0), (1, 0)) == 1


def test_minimal_cut():
    A = validate_domain([(0, 0), (1, 0), (0, -1), (1, -1)])
    t = build_branch_cut(A)
    assert len(t.cut_path) == 2
    assert len(t.crossed_edges) == 1
    assert edge((0, 0), (1, 0)) not in t.crossed_edges
    with pytest.raises(BranchPointOnBoundary):
        build_branch_cut(validate_domain([(0, 0), (1, 0)]))


def test_loop_sign_examples():
    A = square(2)
    t = build_branch_cut(A)
    assert loop_sign(t, [(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)]) == 1
    assert loop_sign(t, [(0, 0), (1, 0), (1, -1), (0, -1), (0, 0)]) == -1
    with pytest.raises(NotALoop):
        loop_sign(t, [(0, 0), (1, 0)])
    with pytest.raises(EdgeOutsideDomain):
        loop_sign(t, [(2, 0), (3, 0), (2, 0)], A)


def random_loop(A, rng, steps):
    """A random walk in ``A`` closed by retracing a random-walk excursion back to its start."""
    pts = [A.points[rng.integers(len(A))]]
    for _ in range(steps):
        x, y = pts[-1]
        nbrs = [q for q in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)) if q in A.vertices]
        pts.append(nbrs[rng.integers(len(nbrs))])
    # return along a shortest path inside the (convex) square
    x, y = pts[-1]
    x0, y0 = pts[0]
    while (x, y) != (x0, y0):
        if x != x0:
            x += 1 if x0 > x else -1
        else:
            y += 1 if y0 > y else -1
        pts.append((x, y))
    return pts


def right_cut(A, n):
    return EdgeSignTable.from_path(A, [(i, 0) for i in range(n + 1)])


def test_loop_signs_cut_independent():
    n = 6
    A = square(n)
    down, right = build_branch_cut(A), right_cut(A, n)
    assert down.crossed_edges != right.crossed_edges
    rng = np.random.default_rng(11)
    for _ in range(100):
        loop = random_loop(A, rng, int(rng.integers(4, 60)))
        w = winding_number(loop)
        s = (-1) ** (w % 2)
        assert loop_sign(down, loop) == s
        assert loop_sign(right, loop) == s


def test_parity_between():
    n = 4
    A = square(n)
    t = build_branch_cut(A)
    assert parity_between(A.vertices, t, (0, 0), (0, 0)) == 1
    assert parity_between(A.vertices, t, (0, 0), (4, 3)) == 1
    U = slit_square(n)
    region = (A.vertices & U.vertices) | {(0, -2), (1, -2)}
    assert parity_between(region, t, (0, -2), (1, -2)) == -1


def test_named_edges_are_rotations():
    for n in (2, 5, 8):
        A = square(n)
        edges = set(boundary_edges(A))
        r = named_edge(n, "right-mid")
        assert r == BoundaryEdge((n, 0), (n + 1, 0))
        for k, name in enumerate(("right-mid", "top-mid", "left-mid", "bottom-mid")):
            b = named_edge(n, name)
            assert b in edges
            assert b == rotate_edge(r, k)
        assert {rotate_edge(b) for b in edges} == edges
