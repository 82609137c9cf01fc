"""Command-line driver: ``ldcfem --table 1 --out table1.csv``.

Exit codes: 0 success, 1 fixture comparison failed, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import linalg
from .assembly import ProblemCoeffs
from .bench import DEFAULT_TOL, compare_fixture, emit_csv, load_fixture
from .errors import LDCError
from .mesh import DomainKind, DomainSpec
from .scheme import Mode, plan_schedule, run

log = logging.getLogger("ldcfem")


class ConfigError(Exception):
    pass


@dataclass
class RunSpec:
    domain: str
    b: tuple
    H: list  # one Fraction per row
    levels: list  # one int per row
    mode: Mode = Mode.MULTILEVEL
    s: Fraction | None = None
    gamma: Fraction | None = None
    table: int | None = None
    out: Path | None = None
    dump: Path | None = None
    tol: float = DEFAULT_TOL
    extra: dict = field(default_factory=dict)

    def configs(self):
        dom = DomainSpec(DomainKind(self.domain))
        coeffs = ProblemCoeffs.convection_diffusion(self.b)
        return [plan_schedule(dom, H, lv, self.s, self.gamma, mode=self.mode, coeffs=coeffs)
                for H, lv in zip(self.H, self.levels)]


def _fraction(text: str) -> Fraction:
    try:
        f = Fraction(text.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"malformed fraction {text!r}") from exc
    return f


def _vector(text: str) -> tuple:
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"malformed vector {text!r}") from exc
    if len(parts) != 2:
        raise ConfigError(f"expected two components in {text!r}")
    return parts


def _read_config(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_").lower()] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ldcfem",
        description="Local defect-correction eigenvalue solver for convection-diffusion "
                    "problems on the L-shaped and slit domains.")
    p.add_argument("--config", help="key = value file; flags override its entries")
    p.add_argument("--domain", choices=["lshape", "slit"])
    p.add_argument("--b", help="convection vector, e.g. 0,3")
    p.add_argument("--H", help="coarse grid size(s), e.g. 1/16 or 1/16,1/32")
    p.add_argument("--levels", help="local levels (one value, or one per H)")
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--table", type=int, help="reproduce reference table 1-8 and compare")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--dump", help="write final nodal values on the mesoscopic grid")
    p.add_argument("--s", help="rate parameter s (default 2/3 lshape, 1/2 slit)")
    p.add_argument("--gamma", help="rate parameter gamma (default as s)")
    p.add_argument("--tol", type=float, help=f"fixture tolerance (default {DEFAULT_TOL})")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def parse_cli(args) -> RunSpec:
    """Merge config file and flags into a :class:`RunSpec`."""
    ns = build_parser().parse_args(args)
    opts = _read_config(ns.config) if ns.config else {}
    for key in ("domain", "b", "H", "levels", "mode", "table", "out", "dump", "s", "gamma", "tol"):
        val = getattr(ns, key)
        if val is not None:
            opts[key.lower()] = str(val)

    table = int(opts["table"]) if "table" in opts else None
    fixture = None
    if table is not None:
        try:
            fixture = load_fixture(table)
        except LDCError as exc:
            raise ConfigError(str(exc)) from exc

    domain = opts.get("domain") or (fixture.domain if fixture else None)
    if domain not in ("lshape", "slit"):
        raise ConfigError("--domain is required (lshape or slit)")
    b = _vector(opts["b"]) if "b" in opts else (fixture.b if fixture else None)
    if b is None:
        raise ConfigError("--b is required")
    mode = Mode(opts.get("mode") or (fixture.mode if fixture else Mode.MULTILEVEL.value))

    if fixture is not None:
        if domain != fixture.domain or tuple(b) != tuple(fixture.b) or mode.value != fixture.mode:
            raise ConfigError(
                f"table {table} is {fixture.domain}, b={fixture.b}, {fixture.mode}; "
                f"got {domain}, b={b}, {mode.value}")
        H = [Fraction(1, n) for n in fixture.grid_sizes()]
        levels = [row.levels for row in fixture.rows]
    else:
        if "h" not in opts:
            raise ConfigError("--H is required without --table")
        H = [_fraction(x) for x in opts["h"].split(",")]
        lv = [int(x) for x in opts.get("levels", "1").split(",")]
        if len(lv) == 1:
            lv = lv * len(H)
        if len(lv) != len(H):
            raise ConfigError("--levels needs one value or one per H")
        levels = lv

    return RunSpec(
        domain=domain, b=tuple(b), H=H, levels=levels, mode=mode,
        s=_fraction(opts["s"]) if "s" in opts else None,
        gamma=_fraction(opts["gamma"]) if "gamma" in opts else None,
        table=table,
        out=Path(opts["out"]) if "out" in opts else None,
        dump=Path(opts["dump"]) if "dump" in opts else None,
        tol=float(opts.get("tol", DEFAULT_TOL)),
    )


def write_metadata(results, path) -> None:
    """Per-level run log: config echo, eigenvalues, DOFs and timings."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "domain", "b", "mode", "H", "w", "s", "gamma", "ordering",
                    "pivot_threshold", "level", "label", "lambda", "dofs", "seconds"])
        for k, res in enumerate(results, 1):
            c = res.config
            for r in res.reports:
                w.writerow([k, c.domain.kind.value, ",".join(f"{x:g}" for x in c.coeffs.convection),
                            c.mode.value, str(c.H), str(c.w), str(c.s), str(c.gamma1),
                            linalg.ORDERING, linalg.PIVOT_THRESHOLD, r.level, r.label,
                            f"{r.lam:.10f}", r.dofs, f"{r.seconds:.3f}"])


def dump_nodal(res, path) -> None:
    """``x y u u*`` of the final approximation at the mesoscopic vertices."""
    u, u_adj = res.final
    mesh = u.base.mesh
    cols = [mesh.vertices[:, 0], mesh.vertices[:, 1], u(mesh.vertices)]
    cols.append(u_adj(mesh.vertices) if u_adj is not None else cols[-1])
    np.savetxt(path, np.column_stack(cols), header="x y u u_adj")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        spec = parse_cli(argv)
        configs = spec.configs()
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ConfigError, LDCError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if "-v" in argv or "--verbose" in argv else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    results = []
    for cfg in configs:
        res = run(cfg)
        results.append(res)
        cells = " ".join(f"{x:.5f}" for x in res.lambdas)
        print(f"H=1/{cfg.n_H} w=1/{cfg.n_w} DOF_H={res.dof_H} DOF_w={res.dof_w}: {cells}")

    if spec.out is not None:
        emit_csv(results, spec.out)
        write_metadata(results, spec.out.with_suffix(".meta.csv"))
    if spec.dump is not None:
        dump_nodal(results[-1], spec.dump)
    if spec.table is not None:
        cmp = compare_fixture(results, load_fixture(spec.table), spec.tol)
        print(f"table {spec.table}: {cmp.summary()}")
        return 0 if cmp.passed else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
