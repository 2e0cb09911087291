"""Command-line front end.

Every subcommand writes a JSON report (to ``--output`` or stdout) and exits
0 when its checks pass, 1 when a check fails and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

from . import harmonic as hc
from .domain import (
    NAMED_POSITIONS,
    BoundaryEdge,
    DomainError,
    LatticeDomain,
    boundary_edges,
    build_branch_cut,
    edge_at,
    load_domain_file,
    named_edge,
    standard_domain,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    pass


@dataclass
class CliConfig:
    """Parsed command line; ``to_argv`` and ``from_argv`` are inverse to each other."""

    subcommand: str
    target: str | None = None  # verify kind, study name or domain file
    domain: str | None = None
    a: str | None = None
    b: str | None = None
    z: str | None = None
    samples: int | None = None
    seed: int | None = None
    sizes: list[int] | None = None
    n: int | None = None
    m: int | None = None
    max_box: int | None = None
    workers: int | None = None
    output: str | None = None
    format: str = "json"

    def to_argv(self) -> list[str]:
        argv = self.subcommand.split()
        if self.target is not None:
            argv.append(self.target)
        for f in fields(self):
            if f.name in ("subcommand", "target", "format"):
                continue
            v = getattr(self, f.name)
            if v is None:
                continue
            flag = "--" + f.name.replace("_", "-")
            argv += [flag, ",".join(map(str, v)) if isinstance(v, list) else str(v)]
        if self.format != "json":
            argv += ["--format", self.format]
        return argv

    @classmethod
    def from_argv(cls, argv: Sequence[str]) -> "CliConfig":
        ns = build_parser().parse_args(list(argv))
        sub = ns.command if ns.command != "domain" else "domain check"
        target = getattr(ns, "target", None)
        if ns.command == "domain":
            target = ns.file
        sizes = getattr(ns, "sizes", None)
        return cls(
            subcommand=sub,
            target=target,
            domain=getattr(ns, "domain", None),
            a=getattr(ns, "a", None),
            b=getattr(ns, "b", None),
            z=getattr(ns, "z", None),
            samples=getattr(ns, "samples", None),
            seed=getattr(ns, "seed", None),
            sizes=_parse_sizes(sizes) if isinstance(sizes, str) else sizes,
            n=getattr(ns, "n", None),
            m=getattr(ns, "m", None),
            max_box=getattr(ns, "max_box", None),
            workers=getattr(ns, "workers", None),
            output=ns.output,
            format=ns.format,
        )


def _parse_sizes(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s]
    except ValueError as exc:
        raise UsageError(f"bad size list {text!r}") from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lerwgreen", description="Loop-erased walk edge probabilities on Z^2 domains.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--output", default=None, help="report path (default: stdout)")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--workers", type=int, default=None)

    v = sub.add_parser("verify", help="exact identity suites")
    v.add_argument("target", choices=("exact",))
    v.add_argument("--max-box", dest="max_box", type=int, default=4)
    common(v)

    mc = sub.add_parser("mc", help="Monte Carlo estimate of the edge probability")
    mc.add_argument("--domain", required=True)
    mc.add_argument("--a", required=True)
    mc.add_argument("--b", required=True)
    mc.add_argument("--samples", type=int, default=100_000)
    mc.add_argument("--seed", type=int, default=0)
    common(mc)

    st = sub.add_parser("study", help="scaling study over square sizes")
    st.add_argument("target", metavar="name")
    st.add_argument("--sizes", default=None)
    st.add_argument("--samples", type=int, default=None)
    st.add_argument("--seed", type=int, default=None)
    common(st)

    rk = sub.add_parser("rect-kernel", help="rectangle Poisson kernels, series against solve")
    rk.add_argument("--n", type=int, default=10)
    rk.add_argument("--m", type=int, default=14)
    common(rk)

    sl = sub.add_parser("slit", help="escape profile of the slit square")
    sl.add_argument("--n", type=int, required=True)
    common(sl)

    sp = sub.add_parser("spinor", help="lattice spinor value")
    sp.add_argument("--domain", required=True)
    sp.add_argument("--z", default="0,0")
    sp.add_argument("--a", required=True)
    common(sp)

    dm = sub.add_parser("domain", help="domain utilities")
    dm.add_argument("action", choices=("check",))
    dm.add_argument("file")
    common(dm)
    return p


# Resolution helpers -------------------------------------------------------


def resolve_edge(A: LatticeDomain, descriptor: str, domain: str) -> BoundaryEdge:
    """A named position (``square`` domains only) or a midpoint ``x,y``."""
    if descriptor in NAMED_POSITIONS:
        kind, _, arg = domain.partition(":")
        if kind != "square":
            raise UsageError("named positions need a square:n domain")
        return named_edge(int(arg), descriptor)
    try:
        x, y = (float(s) for s in descriptor.split(","))
    except ValueError as exc:
        raise UsageError(f"bad edge selector {descriptor!r}") from exc
    return edge_at(A, (x, y))


def _point(text: str):
    try:
        x, y = (int(s) for s in text.split(","))
    except ValueError as exc:
        raise UsageError(f"bad point {text!r}") from exc
    return (x, y)


def _edge_json(b: BoundaryEdge) -> dict:
    return {"inner": list(b.inner), "outer": list(b.outer)}


# Subcommands --------------------------------------------------------------


def _verify(cfg: CliConfig) -> tuple[dict, bool]:
    from . import lerw
    from .spinor import slit_decomposition_check

    box = cfg.max_box or 4
    if not 2 <= box <= lerw.MAX_ENUM_BOX:
        raise UsageError(f"--max-box must be between 2 and {lerw.MAX_ENUM_BOX}")
    report: dict = {"max_box": box}
    t = time.perf_counter()
    sweep = lerw.sweep_corpus(box, keep=True)
    summary = {k: v for k, v in asdict(sweep).items() if k != "instances"}
    report["identity"] = {**summary, "ok": sweep.ok}
    report["instance_fields"] = ["cell_mask", "block_x", "block_y", "pairs", "max_rel_error"]
    report["instances"] = [
        [int(r[0]), int(r[1]), int(r[2]), int(r[3]), float(r[4])] for r in sweep.instances
    ]
    # partition and Fomin sums over the boxes small enough for the pure enumeration
    sub_box = min(box, 4)
    part_err = fomin_err = 0.0
    fomin_ok = part_ok = True
    for A in lerw.iter_corpus(sub_box):
        dr = lerw.verify_domain(A)
        part_err = max(part_err, dr.max_partition_error)
        part_ok &= dr.max_partition_error <= 1e-10
        fr = lerw.FominTable(A).max_error()
        fomin_err = max(fomin_err, fr)
        fomin_ok &= fr <= 1e-9
    report["partition"] = {"box": sub_box, "max_rel_error": part_err, "ok": part_ok}
    report["fomin"] = {"box": sub_box, "max_error": fomin_err, "ok": fomin_ok}
    sdec = slit_decomposition_check(8, 4)
    report["slit_decomposition"] = {"n": 8, "m": 4, "max_error": sdec.max_error, "edges": len(sdec.rows), "ok": sdec.ok}
    report["elapsed"] = time.perf_counter() - t
    ok = sweep.ok and part_ok and fomin_ok and sdec.ok
    return report, ok


def _mc(cfg: CliConfig) -> tuple[dict, bool]:
    from .lerw import mc_edge_probability

    A = standard_domain(cfg.domain)
    a = resolve_edge(A, cfg.a, cfg.domain)
    b = resolve_edge(A, cfg.b, cfg.domain)
    est = mc_edge_probability(A, a, b, cfg.samples, cfg.seed, workers=cfg.workers)
    return {
        "domain": cfg.domain,
        "a": _edge_json(a),
        "b": _edge_json(b),
        "mean": est.mean,
        "stderr": est.stderr,
        "samples": est.samples,
        "seed": est.seed,
    }, True


def _study(cfg: CliConfig) -> tuple[dict, bool, str | None]:
    from .experiments import STUDIES, StudyConfig, run_study

    if cfg.target not in STUDIES:
        raise UsageError(f"unknown study {cfg.target!r}; known: {sorted(STUDIES)}")
    sizes = cfg.sizes or [8, 12, 16, 24, 32, 48, 64]
    sc = StudyConfig()
    if cfg.samples is not None:
        sc.mc_samples = cfg.samples
    if cfg.seed is not None:
        sc.seed = cfg.seed
    if cfg.workers is not None:
        sc.workers = cfg.workers
    res = run_study(cfg.target, sizes, sc)
    return res.summary(), bool(res.passed), res.to_csv()


def _rect(cfg: CliConfig) -> tuple[dict, bool]:
    import numpy as np

    from .spinor import rectangle_kernel_matrix

    n, m = cfg.n or 10, cfg.m or 14
    F = rectangle_kernel_matrix(n, m, "fourier")
    S = rectangle_kernel_matrix(n, m, "solve")
    err = float(np.max(np.abs(F - S)))
    return {"n": n, "m": m, "max_abs_difference": err, "pairs": int(F.size)}, err <= 1e-10


def _slit(cfg: CliConfig) -> tuple[dict, bool]:
    from .spinor import slit_escape_profile

    prof = slit_escape_profile(cfg.n)
    return {
        "n": cfg.n,
        "K": prof.total,
        "profile": [
            {"edge": _edge_json(b), "value": float(v)} for b, v in zip(prof.edges, prof.values)
        ],
    }, True


def _spinor(cfg: CliConfig) -> tuple[dict, bool]:
    from .spinor import spinor

    A = standard_domain(cfg.domain)
    a = resolve_edge(A, cfg.a, cfg.domain)
    z = _point(cfg.z or "0,0")
    table = build_branch_cut(A)
    val = spinor(A, table, z, a)
    return {"domain": cfg.domain, "z": list(z), "a": _edge_json(a), "spinor": val}, abs(val) <= 1 + 1e-12


def _domain_check(cfg: CliConfig) -> tuple[dict, bool]:
    try:
        A = load_domain_file(cfg.target)
    except DomainError as exc:
        return {"file": cfg.target, "valid": False, "error": f"{type(exc).__name__}: {exc}"}, False
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read {cfg.target}: {exc}") from exc
    report = {"file": cfg.target, "valid": True, "vertices": len(A), "boundary_edges": len(boundary_edges(A))}
    try:
        table = build_branch_cut(A)
        report["cut_path"] = [list(d) for d in table.cut_path]
    except DomainError as exc:
        report["cut_path"] = None
        report["cut_error"] = f"{type(exc).__name__}: {exc}"
    return report, True


def _jsonable(obj):
    if hasattr(obj, "item"):  # numpy scalars
        return obj.item()
    if hasattr(obj, "tolist"):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _emit(text: str, output: str | None):
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def run(cfg: CliConfig) -> int:
    csv_text = None
    if cfg.subcommand == "verify":
        report, ok = _verify(cfg)
    elif cfg.subcommand == "mc":
        report, ok = _mc(cfg)
    elif cfg.subcommand == "study":
        report, ok, csv_text = _study(cfg)
    elif cfg.subcommand == "rect-kernel":
        report, ok = _rect(cfg)
    elif cfg.subcommand == "slit":
        report, ok = _slit(cfg)
    elif cfg.subcommand == "spinor":
        report, ok = _spinor(cfg)
    elif cfg.subcommand == "domain check":
        report, ok = _domain_check(cfg)
    else:
        raise UsageError(f"unknown subcommand {cfg.subcommand!r}")
    report["ok"] = bool(ok)
    if cfg.format == "csv" and csv_text is not None:
        _emit(csv_text, cfg.output)
        if cfg.output:
            Path(cfg.output).with_suffix(".json").write_text(json.dumps(report, indent=2, default=_jsonable))
    else:
        _emit(json.dumps(report, indent=2, default=_jsonable), cfg.output)
    return EXIT_OK if ok else EXIT_FAIL


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = CliConfig.from_argv(argv)
        return run(cfg)
    except UsageError as exc:
        sys.stderr.write(f"lerwgreen: {exc}\n")
        return EXIT_USAGE
    except (DomainError, ValueError) as exc:
        sys.stderr.write(f"lerwgreen: {type(exc).__name__}: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
