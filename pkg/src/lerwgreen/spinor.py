"""The spinor observable, its continuum counterpart, slit-square escape and rectangle kernels.

Continuum quantities are only computed for squares, through the explicit
Schwarz-Christoffel map ``g(w) = int_0^w (1 + t^4)^(-1/2) dt`` of the unit disk
onto a square.  The lattice square ``square:n`` corresponds to the square of
half-side ``n`` centred at ``w0``; ``f_A`` is the inverse of ``w -> w0 + (n/s) g(w)``
with ``s = g(1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, optimize, special

from . import harmonic as hc
from .domain import (
    ONE,
    ORIGIN,
    BoundaryEdge,
    EdgeSignTable,
    LatticeDomain,
    Point,
    boundary_edges,
    build_branch_cut,
    centered_square,
    neighbors,
    parity_between,
    rect,
    slit_square,
    square,
)

W0 = complex(0.5, -0.5)
# the straight-down lattice cut is the image of the radius at angle -pi/2
DOWN_CUT_ANGLE = -math.pi / 2


class OnAlpha(ValueError):
    pass


class ZeroDenominator(ZeroDivisionError):
    pass


class AspectOutOfRange(ValueError):
    pass


class QuadratureFailure(RuntimeError):
    pass


# Continuum observable in the disk ----------------------------------------


def _arg(z: complex) -> float:
    """Argument in ``[0, 2 pi)``."""
    t = math.atan2(z.imag, z.real)
    return t + 2 * math.pi if t < 0 else t


def lambda_disk(
    z: complex, theta: float, cut_angle: float = 0.0, raise_on_alpha: bool = False
) -> float:
    """Continuum spinor ``lambda(z, e^{2 i theta})`` in the unit disk.

    The branch cut is the radius at angle ``cut_angle`` (the default is
    ``[0, 1)``).  The modulus is the quotient of the Poisson kernels of the disk
    slit along the antipodal radius ``alpha`` and of the disk; the sign records
    whether ``alpha`` and the cut separate ``z`` from ``a``.  On the closure of
    ``alpha`` the value is 0 by continuity, or :class:`OnAlpha` is raised.
    """
    z = complex(z)
    if abs(z) >= 1:
        raise ValueError("z must lie in the open unit disk")
    rot = complex(math.cos(cut_angle), math.sin(cut_angle))
    z = z / rot
    theta = theta - cut_angle / 2
    a = complex(math.cos(2 * theta), math.sin(2 * theta))
    alpha_dir = (2 * theta + math.pi) % (2 * math.pi)
    # rotate alpha onto [0, 1) and use phi(z) = 2 sqrt(z) / (z + 1)
    zr = z * complex(math.cos(-alpha_dir), math.sin(-alpha_dir))
    t = _arg(zr)
    if abs(zr) < 1e-300 or t == 0.0 or abs(t) < 1e-14 or abs(t - 2 * math.pi) < 1e-14:
        if raise_on_alpha:
            raise OnAlpha("z lies on the antipodal radius")
        return 0.0
    root = math.sqrt(abs(zr)) * complex(math.cos(t / 2), math.sin(t / 2))
    phi = 2 * root / (zr + 1)
    mag = phi.imag * abs(z - a) ** 2 / (1 - abs(z) ** 2)

    def inside(angle):
        return 0 < angle < alpha_dir

    same = inside(_arg(z)) == inside(_arg(a) if abs(_arg(a) - 2 * math.pi) > 1e-15 else 0.0)
    return mag if same else -mag


# Lattice spinor ----------------------------------------------------------


def spinor(A: LatticeDomain, table: EdgeSignTable, z: Point, a: BoundaryEdge) -> float:
    """``Lambda_A(z, a) = R_A(z, a) / H_A(z, a)``."""
    h = hc.interior_poisson(A, z, a)
    if h <= 0:
        raise ZeroDenominator(f"H_A({z}, a) vanishes")
    return hc.signed_exit(A, table, z, a) / h


def spinor_row(
    A: LatticeDomain, table: EdgeSignTable, z: Point, edges: Sequence[BoundaryEdge]
) -> np.ndarray:
    """:func:`spinor` for many exit edges at once."""
    gt = hc.green_table(A)
    col = gt.column(z)
    h = np.array([0.25 * col[gt.index[b.inner]] for b in edges])
    if np.any(h <= 0):
        raise ZeroDenominator(f"H_A({z}, .) vanishes on some edge")
    return hc.signed_exit_row(A, table, z, edges) / h


# Exact first-exit decomposition ------------------------------------------


@dataclass(frozen=True)
class SlitDecompositionRow:
    edge: BoundaryEdge
    lhs: float
    rhs: float
    rhs_signed: float
    error: float


@dataclass(frozen=True)
class SlitDecompositionReport:
    n: int
    m: int
    rows: tuple[SlitDecompositionRow, ...]
    parity: dict
    slit_terms: dict
    max_error: float
    max_slit: float
    parity_mismatch: float
    ok: bool


def _exit_weights(U: LatticeDomain, table: EdgeSignTable | None) -> dict[Point, float]:
    """Weight of walks from 0 that step into ``U`` and leave it at each outside point."""
    gt = hc.green_table(U, table)
    acc = np.zeros(len(gt))
    for y in neighbors(ORIGIN):
        if y in gt.index:
            acc += 0.25 * hc.edge_sign(table, ORIGIN, y) * gt.column(y)
    out: dict[Point, float] = {}
    for b in boundary_edges(U):
        w = acc[gt.index[b.inner]] * 0.25 * hc.edge_sign(table, b.inner, b.outer)
        out[b.outer] = out.get(b.outer, 0.0) + w
    return out


def slit_decomposition_check(
    n: int, m: int, edges: Sequence[BoundaryEdge] | None = None, tol: float = 1e-9
) -> SlitDecompositionReport:
    """Evaluate both sides of the first-exit decomposition of ``Lambda_A(0, a)`` on ``square:n``.

    The walk from 0 is stopped on leaving the slit square ``U_m^-``.  Exits on
    the outer boundary of ``U_m`` carry the constant parity ``Q^{0,w}``; exits on
    the slit beyond 1 cancel in pairs by reflection.  The right-hand side is
    computed twice: with the unsigned kernel times ``Q^{0,w}`` and with the
    signed kernel directly.
    """
    if not 2 <= m < n:
        raise ValueError("need 2 <= m < n")
    A = square(n)
    table = build_branch_cut(A)
    U = slit_square(m)
    plain = _exit_weights(U, None)
    signed = _exit_weights(U, table)
    outer = [w for w in plain if max(abs(w[0]), abs(w[1])) == m]
    slit = [w for w in plain if w[1] == 0 and 2 <= w[0] < m]
    parity = {w: parity_between(U.vertices, table, ORIGIN, w) for w in outer if plain[w] > 0}
    mismatch = max(abs(signed[w] - parity[w] * plain[w]) for w in parity)
    slit_terms = {w: signed[w] for w in slit}
    if edges is None:
        edges = boundary_edges(A)
    gt = hc.green_table(A)
    rows = []
    for a in edges:
        h0 = 0.25 * gt(ORIGIN, a.inner)
        lhs = spinor(A, table, ORIGIN, a)
        rhs = 0.0
        rhs_q = 0.0
        for w, q in parity.items():
            lam = spinor(A, table, w, a)
            ratio = 0.25 * gt(w, a.inner) / h0
            rhs += plain[w] * ratio * q * lam
            rhs_q += signed[w] * ratio * lam
        scale = max(abs(lhs), abs(rhs), 1e-300)
        err = max(abs(lhs - rhs), abs(lhs - rhs_q)) / scale
        rows.append(SlitDecompositionRow(a, lhs, rhs, rhs_q, err))
    max_err = max(r.error for r in rows)
    max_slit = max((abs(v) for v in slit_terms.values()), default=0.0)
    total = sum(plain.values())
    ok = max_err <= tol and max_slit <= tol * total and mismatch <= tol * total
    return SlitDecompositionReport(n, m, tuple(rows), parity, slit_terms, max_err, max_slit, mismatch, ok)


# Slit-square escape ------------------------------------------------------


@dataclass(frozen=True)
class EscapeProfile:
    n: int
    edges: tuple[BoundaryEdge, ...]
    values: np.ndarray
    total: float

    def normalized(self) -> np.ndarray:
        return self.values / self.total

    def at(self, b: BoundaryEdge) -> float:
        return float(self.values[self.edges.index(b)])


def slit_escape_profile(n: int) -> EscapeProfile:
    """``H_{dU_n^-}(0, b)`` on the outer boundary edges of the slit square and their sum ``K(n)``."""
    U = slit_square(n)
    gt = hc.green_table(U)
    acc = np.zeros(len(gt))
    for y in neighbors(ORIGIN):
        if y in gt.index:
            acc += gt.column(y)
    edges = tuple(b for b in boundary_edges(U) if max(abs(b.outer[0]), abs(b.outer[1])) == n)
    vals = np.array([acc[gt.index[b.inner]] / 16.0 for b in edges])
    return EscapeProfile(n, edges, vals, float(vals.sum()))


def escape_profile_shape(n: int, positions: Sequence[float]) -> np.ndarray:
    """Scaled normalized profile ``2n * Hbar_n`` at relative positions along the left side.

    Position ``t`` in ``(-1, 1)`` is the height ``t * n`` on the side ``x = -n``;
    the value is read off the nearest boundary edge, so profiles for different
    ``n`` are directly comparable.
    """
    prof = slit_escape_profile(n)
    bar = prof.normalized()
    left = {b.outer[1]: v for b, v in zip(prof.edges, bar) if b.outer[0] == -n}
    return np.array([2 * n * left[int(round(t * n))] for t in positions])


# Rectangle kernels -------------------------------------------------------


def alpha_l(n: int, m: int, l) -> np.ndarray:
    """Root of ``cosh(alpha pi / n) + cos(l pi / m) = 2``."""
    l = np.asarray(l, dtype=float)
    return (n / math.pi) * np.arccosh(2.0 - np.cos(l * math.pi / m))


def _sinh_ratio(x, y):
    """``sinh(x) / sinh(y)`` for ``0 < x <= y`` without overflow."""
    return np.exp(x - y) * np.expm1(-2 * x) / np.expm1(-2 * y)


def _check_rect(n: int, m: int, k: int, kp: int):
    if not (n / 10 <= m <= 10 * n):
        raise AspectOutOfRange(f"m={m} outside [n/10, 10n] for n={n}")
    for v in (k, kp):
        if not 1 <= v <= m - 1:
            raise ValueError(f"height {v} outside 1..{m - 1}")


def rectangle_kernel(
    n: int,
    m: int,
    k: int,
    kp: int,
    method: str = "fourier",
    side: str = "discrete",
    boundary: bool = False,
) -> float:
    """Poisson kernel of the ``n x m`` rectangle from the left side to the point ``n + i kp``.

    ``side='discrete'``: ``H_A(1 + ik, n + ik')`` for the lattice rectangle
    ``{1..n-1} x {1..m-1}``, by the finite sine series (``method='fourier'``)
    or a linear solve (``method='solve'``).  ``boundary=True`` gives
    ``H_dA(ik, n + ik') = H_A(1 + ik, .) / 4``.

    ``side='continuum'``: ``h_R(1 + ik, n + ik')`` for the rectangle
    ``(0, n) x (0, m)``, or with ``boundary=True`` its normal derivative
    ``h_dR(ik, n + ik')``.  Only the Fourier method applies.
    """
    _check_rect(n, m, k, kp)
    if side == "discrete":
        if method == "solve":
            A = rect(n, m)
            h = hc.interior_poisson(A, (1, k), BoundaryEdge((n - 1, kp), (n, kp)))
        elif method == "fourier":
            l = np.arange(1, m)
            al = alpha_l(n, m, l)
            terms = _sinh_ratio(al * math.pi / n, al * math.pi)
            terms = terms * np.sin(l * k * math.pi / m) * np.sin(l * kp * math.pi / m)
            h = 2.0 / m * float(np.sum(terms))
        else:
            raise ValueError(f"unknown method {method!r}")
        return h / 4 if boundary else h
    if side == "continuum":
        if method != "fourier":
            raise ValueError("the continuum kernel is only available as a Fourier series")
        total = 0.0
        for l in range(1, 4 * m + 1):
            c = l * math.pi / m
            size = c / math.sinh(c * n) if boundary else float(_sinh_ratio(c, c * n))
            total += size * math.sin(c * k) * math.sin(c * kp)
            if size < 1e-16 * abs(total):
                break
        return 2.0 / m * total
    raise ValueError(f"unknown side {side!r}")


def rectangle_kernel_matrix(n: int, m: int, method: str = "fourier", boundary: bool = False) -> np.ndarray:
    """All ``(k, k')`` values of :func:`rectangle_kernel` on the discrete side."""
    if method == "solve":
        _check_rect(n, m, 1, 1)
        A = rect(n, m)
        gt = hc.green_table(A)
        out = np.empty((m - 1, m - 1))
        for j, kp in enumerate(range(1, m)):
            col = gt.column((n - 1, kp))
            for i, k in enumerate(range(1, m)):
                out[i, j] = 0.25 * col[gt.index[(1, k)]]
        return out / 4 if boundary else out
    return np.array(
        [[rectangle_kernel(n, m, k, kp, method, "discrete", boundary) for kp in range(1, m)] for k in range(1, m)]
    )


def rectangle_error_constant(n: int, m: int, factor: float = 0.25) -> float:
    """``max |H_dA - factor * h_dR| * n^5 / (d d')`` over all heights, ``d = min(k, m - k)``."""
    worst = 0.0
    for k in range(1, m):
        for kp in range(1, m):
            disc = rectangle_kernel(n, m, k, kp, "fourier", "discrete", boundary=True)
            cont = rectangle_kernel(n, m, k, kp, "fourier", "continuum", boundary=True)
            d = min(k, m - k) * min(kp, m - kp)
            worst = max(worst, abs(disc - factor * cont) * n**5 / d)
    return worst


# Disk-to-square map ------------------------------------------------------


def _sc_map(w):
    """``g(w) = int_0^w (1 + t^4)^(-1/2) dt`` as ``w 2F1(1/4, 1/2; 5/4; -w^4)``."""
    w = np.asarray(w, dtype=complex)
    return w * special.hyp2f1(0.25, 0.5, 1.25, -(w**4))


HALF_SIDE = float(special.ellipk(0.5) / 2)  # g(1)


def _side_height(phi: float) -> float:
    """Imaginary part of ``g(e^{i phi})`` for ``|phi| <= pi/4``, where ``Re g = g(1)``."""
    if phi < 0:
        return -_side_height(-phi)
    # t = pi/4 - u^2 removes the inverse square-root singularity at the corner
    upper = math.sqrt(max(math.pi / 4 - phi, 0.0))

    def integrand(u):
        x = 2 * u * u
        return 1.0 / math.sqrt(math.sin(x) / x) if x > 0 else 1.0

    val, err = integrate.quad(integrand, 0.0, upper, epsabs=1e-14, epsrel=1e-13, limit=200)
    if err > 1e-11:
        raise QuadratureFailure(f"side integral error estimate {err:.2e}")
    return HALF_SIDE - val


@dataclass
class ThetaMap:
    """Boundary correspondence and conformal radius for ``square:n``."""

    n: int
    half_side: float = HALF_SIDE
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def rho(self) -> float:
        """``r_A / (2n)``; ``f_A'(w0) = s / n`` so ``r_A = n / s``."""
        return 1.0 / (2 * self.half_side)

    @property
    def conformal_radius(self) -> float:
        return 2 * self.n * self.rho

    def boundary_angle(self, x: float, y: float) -> float:
        """``phi`` with ``f_A(x + iy) = e^{i phi}`` for a point on the boundary square, in ``[0, 2 pi)``."""
        rel = complex(x, y) - W0
        n = self.n
        turns = 0
        for turns in range(4):
            if abs(rel.real - n) < 1e-9 and abs(rel.imag) <= n + 1e-9:
                break
            rel = rel * -1j
        else:
            raise ValueError(f"({x}, {y}) is not on the boundary of square:{n}")
        target = rel.imag * self.half_side / n
        key = round(target, 15)
        phi = self._cache.get(key)
        if phi is None:
            if abs(target) >= self.half_side:
                phi = math.copysign(math.pi / 4, target)
            else:
                try:
                    phi = optimize.brentq(
                        lambda p: _side_height(p) - target, -math.pi / 4, math.pi / 4, xtol=1e-15, rtol=1e-15
                    )
                except ValueError as exc:
                    raise QuadratureFailure(str(exc)) from exc
            self._cache[key] = phi
        return (phi + turns * math.pi / 2) % (2 * math.pi)

    def theta(self, b: BoundaryEdge) -> float:
        mx, my = b.midpoint
        return (self.boundary_angle(mx, my) / 2) % math.pi

    def to_disk(self, z) -> np.ndarray:
        """``f_A(z)`` for points ``z`` of the open square (complex or ``(x, y)`` pairs)."""
        z = np.atleast_1d(np.asarray(_as_complex(z), dtype=complex))
        target = (z - W0) * self.half_side / self.n
        w = target / self.half_side
        for _ in range(60):
            step = (_sc_map(w) - target) * np.sqrt(1 + w**4)
            w = w - step
            # keep iterates inside the disk
            big = np.abs(w) >= 1
            w[big] = w[big] / np.abs(w[big]) * 0.999
            if np.max(np.abs(step)) < 1e-15:
                break
        return w


def _as_complex(z):
    if isinstance(z, tuple) and len(z) == 2 and not isinstance(z[0], tuple):
        return complex(z[0], z[1])
    if isinstance(z, (list, tuple)):
        return [_as_complex(v) for v in z]
    return z


def square_theta(n: int, b: BoundaryEdge) -> float:
    """``theta_b`` in ``[0, pi)`` with ``f_A(b) = e^{2 i theta_b}`` for ``square:n``."""
    return ThetaMap(n).theta(b)


def conformal_radius_square(n: int) -> float:
    return ThetaMap(n).conformal_radius


def continuum_spinor(n: int, z, b: BoundaryEdge, cut_angle: float = DOWN_CUT_ANGLE) -> float:
    """``lambda_A(z, b)`` on ``square:n`` with the cut along the image of the given radius."""
    tm = ThetaMap(n)
    return lambda_disk(complex(tm.to_disk(z)[0]), tm.theta(b), cut_angle)


# Numerical checks against the continuum ----------------------------------


def poisson_ratio_check(n: int, a: BoundaryEdge, max_radius: float = 0.8) -> tuple[float, int]:
    """Largest relative gap between ``H_A(z, a)/H_A(0, a)`` and the disk Poisson ratio.

    Points ``z`` of ``square:n`` with ``|f_A(z)| <= max_radius`` are used.  The
    continuum ratio is ``P(f z) / P(f 0)`` with ``P(w) = (1 - |w|^2)/|w - a|^2``.
    Returns the gap and the number of points compared.
    """
    A = square(n)
    tm = ThetaMap(n)
    ea = complex(math.cos(2 * tm.theta(a)), math.sin(2 * tm.theta(a)))
    pts = A.points
    fz = tm.to_disk([complex(*p) for p in pts])
    keep = np.abs(fz) <= max_radius
    gt = hc.green_table(A)
    col = gt.column(a.inner)
    lat = col / col[gt.index[ORIGIN]]
    P = (1 - np.abs(fz) ** 2) / np.abs(fz - ea) ** 2
    f0 = fz[gt.index[ORIGIN]]
    cont = P / ((1 - abs(f0) ** 2) / abs(f0 - ea) ** 2)
    idx = np.array([gt.index[p] for p in pts])
    gap = np.abs(lat[idx] - cont) / cont
    return float(np.max(gap[keep])), int(np.sum(keep))


def spinor_continuum_gap(n: int, m: int, a: BoundaryEdge) -> float:
    """``max |Lambda_A(w, a) - lambda_A(w, a)|`` over points ``w`` on the boundary of ``U_m``."""
    A = square(n)
    table = build_branch_cut(A)
    tm = ThetaMap(n)
    theta = tm.theta(a)
    ring = [p for p in centered_square(m + 1).points if max(abs(p[0]), abs(p[1])) == m]
    fz = tm.to_disk([complex(*p) for p in ring])
    worst = 0.0
    for w, f in zip(ring, fz):
        lat = spinor(A, table, w, a)
        cont = lambda_disk(complex(f), theta, DOWN_CUT_ANGLE)
        worst = max(worst, abs(lat - cont))
    return worst


def reflect(p: Point) -> Point:
    """``x -> 1 - x``, which maps ``square:n`` to itself and swaps 0 and 1."""
    return (1 - p[0], p[1])


def reflection_check(n: int) -> tuple[float, bool]:
    """Compare ``|Lambda_A(1, .)|`` with ``|Lambda_A(0, .)|`` at reflected edges.

    Returns the largest difference and whether the maximizing edge of one is
    the reflection of the maximizing edge of the other.
    """
    A = square(n)
    table = build_branch_cut(A)
    edges = boundary_edges(A)
    refl = [BoundaryEdge(reflect(b.inner), reflect(b.outer)) for b in edges]
    L0 = np.abs(spinor_row(A, table, ORIGIN, edges))
    L1 = np.abs(spinor_row(A, table, ONE, refl))
    diff = float(np.max(np.abs(L0 - L1)))
    top0 = {edges[i] for i in np.flatnonzero(L0 >= L0.max() * (1 - 1e-12))}
    L1_by_edge = dict(zip(refl, L1))
    L1_all = np.array([L1_by_edge[b] for b in edges])
    top1 = {edges[i] for i in np.flatnonzero(L1_all >= L1_all.max() * (1 - 1e-12))}
    mapped = {BoundaryEdge(reflect(b.inner), reflect(b.outer)) for b in top0}
    return diff, mapped == top1
