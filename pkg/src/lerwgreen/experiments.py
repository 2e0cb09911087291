"""Scaling studies on squares and power-law fits.

Each study evaluates one observable on ``square:n`` (or the slit square) for a
list of sizes and fits ``log value`` against ``log n`` by ordinary least squares.
Local slopes between consecutive sizes are reported as ``drift`` so finite-size
effects are visible next to the pass flag.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import harmonic as hc
from .domain import ONE, ORIGIN, boundary_edges, build_branch_cut, named_edge, rotate_edge, square
from .lerw import identity_terms, mc_edge_probability
from .spinor import ThetaMap, slit_escape_profile, spinor_row


class InsufficientPoints(ValueError):
    pass


class NonPositiveValue(ValueError):
    pass


class UnknownStudy(KeyError):
    pass


class PrecheckFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class PowerFit:
    slope: float
    intercept: float
    stderr: float
    passed: bool | None = None


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    X = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = len(x) - 2
    if dof > 0:
        s2 = float(resid @ resid) / dof
        stderr = math.sqrt(s2 / float(np.sum((x - x.mean()) ** 2)))
    else:
        stderr = 0.0
    return float(coef[0]), float(coef[1]), stderr


def fit_power_law(
    points: Sequence[tuple[float, float]], expect_slope: float | None = None, tol: float | None = None
) -> PowerFit:
    """OLS fit of ``log y = slope log x + intercept``; passes iff ``|slope - expect| <= tol``."""
    if len(points) < 3:
        raise InsufficientPoints("a power-law fit needs at least 3 points")
    x = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise NonPositiveValue("power-law fits need positive abscissae and values")
    slope, intercept, stderr = _ols(np.log(x), np.log(y))
    passed = None
    if expect_slope is not None and tol is not None:
        passed = abs(slope - expect_slope) <= tol
    return PowerFit(slope, intercept, stderr, passed)


def fit_log_law(points: Sequence[tuple[float, float]]) -> PowerFit:
    """OLS fit of ``y = slope log x + intercept``."""
    if len(points) < 3:
        raise InsufficientPoints("a fit needs at least 3 points")
    x = np.array([p[0] for p in points], dtype=float)
    if np.any(x <= 0):
        raise NonPositiveValue("log fits need positive abscissae")
    y = np.array([p[1] for p in points], dtype=float)
    return PowerFit(*_ols(np.log(x), y))


def local_slopes(points: Sequence[tuple[float, float]], log_y: bool = True) -> list[float]:
    out = []
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        dy = math.log(y1 / y0) if log_y else y1 - y0
        out.append(dy / math.log(x1 / x0))
    return out


@dataclass
class StudyConfig:
    mc_samples: int = 100_000
    seed: int = 7
    precheck_max_n: int = 8
    workers: int = 1
    tol: float | None = None


@dataclass
class StudyResult:
    study: str
    rows: list[tuple[int, str, float]]
    primary: str
    expect: float | None
    tol: float | None
    slope: float | None = None
    intercept: float | None = None
    stderr: float | None = None
    drift: list[float] = field(default_factory=list)
    passed: bool = False
    extra: dict = field(default_factory=dict)

    def series(self, observable: str) -> list[tuple[int, float]]:
        return [(n, v) for n, o, v in self.rows if o == observable]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["study", "n", "observable", "value"])
        for n, o, v in self.rows:
            w.writerow([self.study, n, o, repr(float(v))])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "study": self.study,
            "slope": self.slope,
            "stderr": self.stderr,
            "expect": self.expect,
            "pass": bool(self.passed),
            "tol": self.tol,
            "intercept": self.intercept,
            "drift": self.drift,
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


# Per-size observables ----------------------------------------------------


def _loops(n: int, cfg: StudyConfig) -> dict[str, float]:
    A = square(n)
    _, e2m = hc.odd_loop_mass(A, build_branch_cut(A))
    return {"exp2m": e2m}


def _spinor(n: int, cfg: StudyConfig) -> dict[str, float]:
    A = square(n)
    table = build_branch_cut(A)
    right, left = named_edge(n, "right-mid"), named_edge(n, "left-mid")
    L0 = spinor_row(A, table, ORIGIN, [right, left])
    L1 = spinor_row(A, table, ONE, [left])
    return {
        "abs_spinor_right_mid": abs(L0[0]),
        "abs_spinor_left_mid": abs(L0[1]),
        "left_mid_ratio_1_0": abs(L1[0] / L0[1]),
    }


def _beurling(n: int, cfg: StudyConfig) -> dict[str, float]:
    return {"K": slit_escape_profile(n).total}


def _green34(n: int, cfg: StudyConfig) -> dict[str, float]:
    A = square(n)
    a = named_edge(n, "right-mid")
    b90, b180 = rotate_edge(a, 1), rotate_edge(a, 2)
    rhs, _ = identity_terms(A, [a, b90, b180])
    out = {"P180": float(rhs[0, 2]), "P90": float(rhs[0, 1])}
    out["ratio_90_180"] = out["P90"] / out["P180"]
    return out


def sin3_edges(n: int) -> list:
    """The three quarter-turn images of ``right-mid`` and a few generic edges of ``square:n``."""
    a = named_edge(n, "right-mid")
    out = [rotate_edge(a, k) for k in (1, 2, 3)]
    for (x, y) in ((0.25, 1.0), (-0.5, 1.0), (-1.0, 0.5), (-1.0, -0.5), (0.5, -1.0)):
        # side point at relative position (x, y) of the square, snapped to a boundary edge
        if abs(y) == 1.0:
            col = int(round(x * n))
            out.append(_edge_from_outer(n, (col, n if y > 0 else -n - 1)))
        else:
            row = int(round(y * n)) - 1
            out.append(_edge_from_outer(n, (n + 1 if x > 0 else -n, row)))
    return out


def _edge_from_outer(n: int, outer):
    from .domain import BoundaryEdge

    x, y = outer
    if x > n:
        inner = (x - 1, y)
    elif x < -n + 1:
        inner = (x + 1, y)
    elif y > n - 1:
        inner = (x, y - 1)
    else:
        inner = (x, y + 1)
    return BoundaryEdge(inner, outer)


def _sin3(n: int, cfg: StudyConfig) -> dict[str, float]:
    A = square(n)
    a = named_edge(n, "right-mid")
    bs = sin3_edges(n)
    tm = ThetaMap(n)
    ta = tm.theta(a)
    rhs, _ = identity_terms(A, [a] + bs)
    vals = {}
    for k, b in enumerate(bs):
        s3 = abs(math.sin(ta - tm.theta(b))) ** 3
        vals[f"collapse_{k}"] = float(rhs[0, k + 1]) / s3
    v = np.array(list(vals.values()))
    vals["spread"] = float((v.max() - v.min()) / v.mean())
    return vals


def _qbar(n: int, cfg: StudyConfig) -> dict[str, float]:
    A = square(n)
    return {"qbar": hc.qbar(A, build_branch_cut(A)), "G00": hc.green(A, ORIGIN, ORIGIN)}


def _green00(n: int, cfg: StudyConfig) -> dict[str, float]:
    return {"G00": hc.green(square(n), ORIGIN, ORIGIN)}


@dataclass(frozen=True)
class StudySpec:
    compute: Callable[[int, StudyConfig], dict[str, float]]
    primary: str
    expect: float | None
    tol: float | None
    kind: str = "power"  # power | log | collapse | cauchy


STUDIES: dict[str, StudySpec] = {
    "loops": StudySpec(_loops, "exp2m", 0.25, 0.02),
    "spinor": StudySpec(_spinor, "abs_spinor_right_mid", -0.5, 0.03),
    "beurling": StudySpec(_beurling, "K", -0.5, 0.03),
    "green34": StudySpec(_green34, "P180", -0.75, 0.05),
    "sin3": StudySpec(_sin3, "spread", None, 0.1, "collapse"),
    "qbar": StudySpec(_qbar, "qbar", None, None, "cauchy"),
    "green00": StudySpec(_green00, "G00", 2 / math.pi, 0.02, "log"),
}


def _precheck_green34(sizes: Sequence[int], cfg: StudyConfig) -> list[dict]:
    """Identity right-hand side against Monte Carlo for the small sizes of a green34 run."""
    out = []
    for n in sizes:
        if n > cfg.precheck_max_n:
            continue
        A = square(n)
        a, b = named_edge(n, "right-mid"), named_edge(n, "left-mid")
        rhs, _ = identity_terms(A, [a, b])
        est = mc_edge_probability(A, a, b, cfg.mc_samples, cfg.seed, workers=cfg.workers)
        z = abs(est.mean - rhs[0, 1]) / est.stderr
        out.append({"n": n, "rhs": float(rhs[0, 1]), "mc": est.mean, "stderr": est.stderr, "z": z})
        if z > 3:
            raise PrecheckFailed(f"square:{n}: identity and Monte Carlo differ by {z:.1f} sigma")
    return out


def run_study(name: str, sizes: Sequence[int], config: StudyConfig | None = None) -> StudyResult:
    if name not in STUDIES:
        raise UnknownStudy(name)
    cfg = config or StudyConfig()
    spec = STUDIES[name]
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    tol = cfg.tol if cfg.tol is not None else spec.tol
    extra: dict = {}
    if name == "green34":
        extra["precheck"] = _precheck_green34(sizes, cfg)

    def one(n):
        vals = spec.compute(n, cfg)
        hc.clear_caches()
        return n, vals

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(one, sizes))
    else:
        results = [one(n) for n in sizes]
    rows = [(n, k, float(v)) for n, vals in results for k, v in vals.items()]
    res = StudyResult(name, rows, spec.primary, spec.expect, tol, extra=extra)
    series = res.series(spec.primary)
    if spec.kind == "power":
        fit = fit_power_law(series, spec.expect, tol)
        res.slope, res.intercept, res.stderr, res.passed = fit.slope, fit.intercept, fit.stderr, bool(fit.passed)
        res.drift = local_slopes(series)
    elif spec.kind == "log":
        fit = fit_log_law(series)
        res.slope, res.intercept, res.stderr = fit.slope, fit.intercept, fit.stderr
        res.passed = abs(fit.slope / spec.expect - 1) <= tol
        res.drift = local_slopes(series, log_y=False)
    elif spec.kind == "collapse":
        res.passed = series[-1][1] <= tol
        res.extra["largest_n_spread"] = series[-1][1]
    elif spec.kind == "cauchy":
        vals = [v for _, v in series]
        diffs = [b - a for a, b in zip(vals, vals[1:])]
        res.extra["differences"] = diffs
        res.passed = len(diffs) >= 2 and abs(diffs[-1]) < abs(diffs[0])
        g = res.series("G00")
        if len(g) >= 3:
            fit = fit_log_law(g)
            res.extra["G00_slope"] = fit.slope
            res.extra["G00_slope_rel_error"] = fit.slope / (2 / math.pi) - 1
    if name == "spinor":
        res.extra["left_mid_ratio_1_0"] = res.series("left_mid_ratio_1_0")
    if name == "green34":
        res.extra["ratio_90_180"] = res.series("ratio_90_180")
        res.extra["ratio_target"] = 2 ** -1.5
    return res
