"""Lattice domains, boundary edges and the branch cut.

Points are integer pairs ``(x, y)``.  Dual-lattice points ``w0 + (i, j)`` with
``w0 = (1/2, -1/2)`` are stored by their integer offset ``(i, j)``; the dual
point ``(i, j)`` is the centre of the unit face with corners ``(i, j)``,
``(i + 1, j)``, ``(i, j - 1)`` and ``(i + 1, j - 1)``.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

Point = tuple[int, int]
Edge = frozenset  # undirected primal edge {p, q}

STEPS: tuple[Point, ...] = ((1, 0), (-1, 0), (0, 1), (0, -1))
ORIGIN: Point = (0, 0)
ONE: Point = (1, 0)
BRANCH_BLOCK: frozenset[Point] = frozenset({(0, 0), (1, 0), (0, -1), (1, -1)})


class DomainError(ValueError):
    """Base class for rejected domains and domain-level queries."""


class MissingOrigin(DomainError):
    pass


class Disconnected(DomainError):
    pass


class ComplementDisconnected(DomainError):
    pass


class SizeTooSmall(DomainError):
    pass


class BranchPointOnBoundary(DomainError):
    pass


class NotALoop(DomainError):
    pass


class EdgeOutsideDomain(DomainError):
    pass


class Unreachable(DomainError):
    pass


class OutOfDomain(DomainError):
    pass


def neighbors(p: Point) -> list[Point]:
    x, y = p
    return [(x + dx, y + dy) for dx, dy in STEPS]


def edge(p: Point, q: Point) -> Edge:
    return frozenset((p, q))


@dataclass(frozen=True)
class LatticeDomain:
    """A finite vertex set of Z^2.  Build through :func:`validate_domain`."""

    vertices: frozenset[Point]
    bounding_box: tuple[int, int, int, int]  # xmin, xmax, ymin, ymax
    contains_origin: bool

    @cached_property
    def points(self) -> list[Point]:
        return sorted(self.vertices)

    @cached_property
    def index(self) -> dict[Point, int]:
        return {p: i for i, p in enumerate(self.points)}

    def __len__(self) -> int:
        return len(self.vertices)

    def __contains__(self, p: object) -> bool:
        return p in self.vertices

    def interior_edges(self) -> list[tuple[Point, Point]]:
        """Undirected edges with both ends in the domain, each listed once."""
        out = []
        for p in self.points:
            for q in ((p[0] + 1, p[1]), (p[0], p[1] + 1)):
                if q in self.vertices:
                    out.append((p, q))
        return out

    def to_json(self) -> str:
        return json.dumps({"vertices": [list(p) for p in self.points]})


@dataclass(frozen=True, order=True)
class BoundaryEdge:
    """Directed boundary edge ``[inner, outer]`` of a domain."""

    inner: Point
    outer: Point

    @property
    def midpoint(self) -> tuple[float, float]:
        return ((self.inner[0] + self.outer[0]) / 2, (self.inner[1] + self.outer[1]) / 2)


@dataclass(frozen=True)
class Walk:
    points: tuple[Point, ...]

    def __post_init__(self):
        for p, q in zip(self.points, self.points[1:]):
            if abs(p[0] - q[0]) + abs(p[1] - q[1]) != 1:
                raise ValueError(f"non nearest-neighbour step {p} -> {q}")

    def __len__(self) -> int:
        return max(len(self.points) - 1, 0)

    @property
    def weight(self) -> float:
        return 4.0 ** -len(self)

    def is_self_avoiding(self) -> bool:
        return len(set(self.points)) == len(self.points)

    def __add__(self, other: "Walk") -> "Walk":
        if self.points[-1] != other.points[0]:
            raise ValueError("concatenation needs matching endpoints")
        return Walk(self.points + other.points[1:])


def _bbox(points: Iterable[Point]) -> tuple[int, int, int, int]:
    xs, ys = zip(*points)
    return min(xs), max(xs), min(ys), max(ys)


def _is_connected(cells: set[Point]) -> bool:
    if not cells:
        return True
    start = next(iter(cells))
    seen = {start}
    stack = [start]
    while stack:
        p = stack.pop()
        for q in neighbors(p):
            if q in cells and q not in seen:
                seen.add(q)
                stack.append(q)
    return len(seen) == len(cells)


def _complement_connected(vertices: frozenset[Point], box) -> bool:
    # every cell of the one-cell frame is joined through the virtual outside node,
    # so start the flood from the whole frame at once
    xmin, xmax, ymin, ymax = box
    cells = {
        (x, y)
        for x in range(xmin - 1, xmax + 2)
        for y in range(ymin - 1, ymax + 2)
        if (x, y) not in vertices
    }
    frame = [p for p in cells if p[0] in (xmin - 1, xmax + 1) or p[1] in (ymin - 1, ymax + 1)]
    seen = set(frame)
    stack = list(frame)
    while stack:
        p = stack.pop()
        for q in neighbors(p):
            if q in cells and q not in seen:
                seen.add(q)
                stack.append(q)
    return len(seen) == len(cells)


def validate_domain(points: Iterable[Point], require_origin: bool = True) -> LatticeDomain:
    """Check simple connectivity and wrap ``points`` as a :class:`LatticeDomain`."""
    vertices = frozenset((int(x), int(y)) for x, y in points)
    if not vertices:
        raise DomainError("empty vertex set")
    if require_origin and ORIGIN not in vertices:
        raise MissingOrigin("the domain must contain the origin")
    if not _is_connected(set(vertices)):
        raise Disconnected("vertex set does not induce a connected subgraph")
    box = _bbox(vertices)
    if not _complement_connected(vertices, box):
        raise ComplementDisconnected("complement is disconnected (the domain has a hole)")
    return LatticeDomain(vertices, box, ORIGIN in vertices)


def square(n: int) -> LatticeDomain:
    if n < 2:
        raise SizeTooSmall("square:n needs n >= 2")
    pts = [(x, y) for x in range(-n + 1, n + 1) for y in range(-n, n)]
    return validate_domain(pts)


def rect(n: int, m: int) -> LatticeDomain:
    if n < 3 or m < 3:
        raise SizeTooSmall("rect:nxm needs n, m >= 3")
    pts = [(j, k) for j in range(1, n) for k in range(1, m)]
    return validate_domain(pts, require_origin=False)


def centered_square(n: int) -> LatticeDomain:
    """``U_n = {|x| < n, |y| < n}``."""
    pts = [(x, y) for x in range(-n + 1, n) for y in range(-n + 1, n)]
    return validate_domain(pts)


def slit_square(n: int) -> LatticeDomain:
    """``U_n`` with the slit ``{0, 1, ..., n}`` of the positive real axis removed."""
    if n < 2:
        raise SizeTooSmall("slit-square:n needs n >= 2")
    slit = {(k, 0) for k in range(n + 1)}
    pts = [(x, y) for x in range(-n + 1, n) for y in range(-n + 1, n) if (x, y) not in slit]
    return validate_domain(pts, require_origin=False)


def load_domain_file(path: str | Path) -> LatticeDomain:
    data = json.loads(Path(path).read_text())
    return validate_domain([tuple(v) for v in data["vertices"]])


def standard_domain(descriptor: str) -> LatticeDomain:
    """Build a domain from ``square:<n>``, ``rect:<n>x<m>``, ``slit-square:<n>`` or ``file:<path>``."""
    kind, _, arg = descriptor.partition(":")
    if kind == "square":
        return square(int(arg))
    if kind == "rect":
        n, m = arg.lower().split("x")
        return rect(int(n), int(m))
    if kind == "slit-square":
        return slit_square(int(arg))
    if kind == "file":
        return load_domain_file(arg)
    raise ValueError(f"unknown domain descriptor {descriptor!r}")


def boundary_edges(A: LatticeDomain) -> list[BoundaryEdge]:
    out = [BoundaryEdge(p, q) for p in A.points for q in neighbors(p) if q not in A.vertices]
    out.sort(key=lambda b: b.midpoint)
    return out


NAMED_POSITIONS = ("right-mid", "top-mid", "left-mid", "bottom-mid")


def rotate_quarter(p: Point) -> Point:
    """Counterclockwise rotation by 90 degrees about ``w0``; maps ``square:n`` onto itself."""
    return (-p[1], p[0] - 1)


def rotate_edge(b: BoundaryEdge, turns: int = 1) -> BoundaryEdge:
    inner, outer = b.inner, b.outer
    for _ in range(turns % 4):
        inner, outer = rotate_quarter(inner), rotate_quarter(outer)
    return BoundaryEdge(inner, outer)


def named_edge(n: int, name: str) -> BoundaryEdge:
    """Boundary edge of ``square:n`` nearest the middle of a side.

    ``right-mid`` is ``[n, n + 1]``; the others are its images under quarter
    turns about ``w0``, so the four are exact rotations of one another.
    """
    if name not in NAMED_POSITIONS:
        raise ValueError(f"unknown position {name!r}; expected one of {NAMED_POSITIONS}")
    return rotate_edge(BoundaryEdge((n, 0), (n + 1, 0)), NAMED_POSITIONS.index(name))


def edge_at(A: LatticeDomain, midpoint: tuple[float, float]) -> BoundaryEdge:
    """The boundary edge of ``A`` whose midpoint is ``midpoint``."""
    for b in boundary_edges(A):
        if abs(b.midpoint[0] - midpoint[0]) < 1e-9 and abs(b.midpoint[1] - midpoint[1]) < 1e-9:
            return b
    raise EdgeOutsideDomain(f"no boundary edge with midpoint {midpoint}")


# Branch cut --------------------------------------------------------------

DualPoint = tuple[int, int]

# preference orders for the breadth-first search, as (di, dj) dual steps
CUT_DOWN_FIRST: tuple[DualPoint, ...] = ((0, -1), (-1, 0), (1, 0), (0, 1))
CUT_RIGHT_FIRST: tuple[DualPoint, ...] = ((1, 0), (0, -1), (0, 1), (-1, 0))


def face_corners(d: DualPoint) -> tuple[Point, Point, Point, Point]:
    i, j = d
    return (i, j), (i + 1, j), (i, j - 1), (i + 1, j - 1)


def crossed_primal_edge(d: DualPoint, e: DualPoint) -> Edge:
    """The primal edge crossed by the unit dual step ``d -> e``."""
    (i, j), (k, l) = d, e
    if l == j:  # horizontal dual step crosses a vertical primal edge
        x = max(i, k)
        return edge((x, j), (x, j - 1))
    y = min(j, l)
    return edge((i, y), (i + 1, y))


def dual_to_plane(d: DualPoint) -> tuple[float, float]:
    return (d[0] + 0.5, d[1] - 0.5)


@dataclass(frozen=True)
class EdgeSignTable:
    """A dual path from ``w0`` to the boundary of ``D_A`` and the primal edges it crosses."""

    cut_path: tuple[DualPoint, ...]
    crossed_edges: frozenset[Edge] = field(default_factory=frozenset)

    def sign(self, p: Point, q: Point) -> int:
        return -1 if edge(p, q) in self.crossed_edges else 1

    @classmethod
    def from_path(cls, A: LatticeDomain, path: Sequence[DualPoint]) -> "EdgeSignTable":
        """Validate an explicit dual path and build its sign table."""
        path = tuple(tuple(d) for d in path)
        if not path or path[0] != (0, 0):
            raise ValueError("a cut starts at w0")
        if len(set(path)) != len(path):
            raise ValueError("cut path must be simple")
        for d in path[:-1]:
            if not all(c in A.vertices for c in face_corners(d)):
                raise ValueError(f"dual point {dual_to_plane(d)} is not interior")
        if all(c in A.vertices for c in face_corners(path[-1])):
            raise ValueError("cut must end on the boundary of D_A")
        crossed = set()
        for d, e in zip(path, path[1:]):
            if abs(d[0] - e[0]) + abs(d[1] - e[1]) != 1:
                raise ValueError("dual steps must have unit length")
            crossed.add(crossed_primal_edge(d, e))
        if edge(ORIGIN, ONE) in crossed:
            raise ValueError("the cut may not cross [0, 1]")
        return cls(path, frozenset(crossed))


def build_branch_cut(
    A: LatticeDomain, preference: Sequence[DualPoint] = CUT_DOWN_FIRST
) -> EdgeSignTable:
    """Shortest dual path from ``w0`` to the boundary of ``D_A`` avoiding the edge [0, 1].

    Breadth-first search expanding dual neighbours in ``preference`` order; among
    the boundary dual points at minimal distance the one with the smallest
    ``(y, x)`` is used.  For ``square:n`` this is the straight ray downwards.
    """
    if not BRANCH_BLOCK <= A.vertices:
        raise BranchPointOnBoundary("the domain must contain 0, 1, -i and 1-i")

    def interior(d):
        return all(c in A.vertices for c in face_corners(d))

    forbidden = frozenset({((0, 0), (0, 1)), ((0, 1), (0, 0))})
    parent: dict[DualPoint, DualPoint | None] = {(0, 0): None}
    frontier = [(0, 0)]
    targets: list[DualPoint] = []
    while frontier and not targets:
        nxt = []
        for d in frontier:
            for di, dj in preference:
                e = (d[0] + di, d[1] + dj)
                if e in parent or (d, e) in forbidden:
                    continue
                parent[e] = d
                if interior(e):
                    nxt.append(e)
                else:
                    targets.append(e)
        frontier = nxt
    end = min(targets, key=lambda d: (d[1], d[0]))
    path = [end]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return EdgeSignTable.from_path(A, path[::-1])


def loop_sign(table: EdgeSignTable, loop: Sequence[Point], A: LatticeDomain | None = None) -> int:
    """Product of edge signs along a closed walk."""
    pts = list(loop)
    if len(pts) < 1 or pts[0] != pts[-1]:
        raise NotALoop("a loop must end where it starts")
    Walk(tuple(pts))
    s = 1
    for p, q in zip(pts, pts[1:]):
        if A is not None and (p not in A.vertices or q not in A.vertices):
            raise EdgeOutsideDomain(f"edge {p}-{q} leaves the domain")
        s *= table.sign(p, q)
    return s


def winding_number(loop: Sequence[Point], center: tuple[float, float] = (0.5, -0.5)) -> int:
    """Winding number of a closed lattice polygon about a dual point (crossing count)."""
    cx, cy = center
    w = 0
    for (x0, y0), (x1, y1) in zip(loop, loop[1:]):
        # count signed crossings of the upward vertical ray from the centre
        if y0 == y1 and y0 > cy and min(x0, x1) < cx < max(x0, x1):
            w += 1 if x1 < x0 else -1
    return w


def parity_between(
    region: Iterable[Point], table: EdgeSignTable, z: Point, w: Point
) -> int:
    """+1 when ``z`` and ``w`` are joined inside ``region`` without crossing the cut, else -1.

    Only edges with at least one end in ``region`` are used, so ``z`` and ``w``
    may be attachment points outside it.
    """
    region = set(region)
    if z == w:
        return 1

    def reach(allow_cut: bool) -> bool:
        seen = {z}
        stack = [z]
        while stack:
            p = stack.pop()
            for q in neighbors(p):
                if q in seen or (p not in region and q not in region):
                    continue
                if q not in region and q != w:
                    continue
                if not allow_cut and table.sign(p, q) < 0:
                    continue
                if q == w:
                    return True
                seen.add(q)
                stack.append(q)
        return False

    if reach(False):
        return 1
    if reach(True):
        return -1
    raise Unreachable(f"{w} cannot be reached from {z}")
