"""Reference tables, CSV output and golden-value comparison."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources

from .errors import FixtureError
from .mesh import DomainKind, DomainSpec
from .scheme import SchemeResult, dof_estimate

N_LOCAL = 6
COLUMNS = ["DOF_H", "DOF_w", "lambda_H", "lambda_w"] + [f"lambda_wh{i}" for i in range(1, N_LOCAL + 1)]
DEFAULT_TOL = 5e-3


@dataclass
class Row:
    """One table row: DOFs plus eigenvalue cells (``None`` where empty)."""

    dof_H: int
    dof_w: int
    values: list

    @property
    def levels(self) -> int:
        """Number of populated local-correction columns."""
        return sum(v is not None for v in self.values[2:])

    @classmethod
    def from_result(cls, res: SchemeResult) -> "Row":
        lams = res.lambdas
        cells = lams + [None] * (2 + N_LOCAL - len(lams))
        return cls(res.dof_H, res.dof_w, cells)


@dataclass
class FixtureTable:
    table_id: int
    domain: str
    b: tuple
    mode: str
    rows: list = field(default_factory=list)

    @property
    def domain_spec(self) -> DomainSpec:
        return DomainSpec(DomainKind(self.domain))

    def grid_sizes(self) -> list[int]:
        """Coarse grid ``n`` (``H = 1/n``) for each row, recovered from ``DOF_H``."""
        dom = self.domain_spec
        out = []
        for row in self.rows:
            n = next((2**k for k in range(1, 12) if dof_estimate(dom, 2**k) == row.dof_H), None)
            if n is None:
                raise FixtureError(f"no uniform grid has {row.dof_H} unknowns on {self.domain}")
            out.append(n)
        return out


def _cell(tok: str):
    return None if tok == "-" else float(tok)


def parse_fixture(text: str, table_id: int = 0) -> FixtureTable:
    meta = {}
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" in line:
            key, val = (s.strip() for s in line.split("=", 1))
            meta[key] = val
            continue
        toks = line.split()
        if toks[0] == "DOF_H":
            continue
        rows.append(Row(int(toks[0]), int(toks[1]), [_cell(t) for t in toks[2:]]))
    b = tuple(float(x) for x in meta["b"].split(","))
    return FixtureTable(table_id, meta["domain"], b, meta.get("mode", "multilevel"), rows)


def load_fixture(table_id: int) -> FixtureTable:
    if table_id not in range(1, 9):
        raise FixtureError(f"no reference table {table_id}")
    text = resources.files("ldcfem.fixtures").joinpath(f"table{table_id}.txt").read_text()
    return parse_fixture(text, table_id)


def _fmt(v):
    return "" if v is None else f"{v:.5f}"


def emit_csv(rows, path) -> None:
    """Write ``rows`` (:class:`Row` or :class:`SchemeResult`) under the fixed header."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in rows:
            if isinstance(r, SchemeResult):
                r = Row.from_result(r)
            cells = list(r.values) + [None] * (2 + N_LOCAL - len(r.values))
            w.writerow([r.dof_H, r.dof_w] + [_fmt(v) for v in cells])


def read_csv(path) -> list[Row]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != COLUMNS:
            raise FixtureError(f"unexpected CSV header {header}")
        return [Row(int(r[0]), int(r[1]), [float(x) if x else None for x in r[2:]]) for r in rd]


@dataclass
class Comparison:
    passed: bool
    max_diff: float
    failures: list  # (row, column, computed, expected, diff)

    def summary(self) -> str:
        if self.passed:
            return f"PASS (max |diff| = {self.max_diff:.2e})"
        lines = [f"FAIL ({len(self.failures)} cells, max |diff| = {self.max_diff:.2e})"]
        for row, col, got, want, diff in self.failures:
            lines.append(f"  row {row + 1} {col}: computed {got} expected {want} diff {diff:.2e}")
        return "\n".join(lines)


def compare_fixture(rows, fixture: FixtureTable, tol: float = DEFAULT_TOL) -> Comparison:
    """Cellwise check: DOFs exact, eigenvalues within ``tol`` absolute."""
    rows = [Row.from_result(r) if isinstance(r, SchemeResult) else r for r in rows]
    if len(rows) != len(fixture.rows):
        raise FixtureError(f"{len(rows)} computed rows vs {len(fixture.rows)} in table {fixture.table_id}")
    failures = []
    max_diff = 0.0
    for k, (got, want) in enumerate(zip(rows, fixture.rows)):
        for col, a, b in (("DOF_H", got.dof_H, want.dof_H), ("DOF_w", got.dof_w, want.dof_w)):
            if a != b:
                failures.append((k, col, a, b, float(abs(a - b))))
        for j, expected in enumerate(want.values):
            if expected is None:
                continue
            computed = got.values[j] if j < len(got.values) else None
            if computed is None:
                raise FixtureError(f"row {k + 1} lacks column {COLUMNS[j + 2]}")
            diff = abs(computed - expected)
            max_diff = max(max_diff, diff)
            if diff > tol:
                failures.append((k, COLUMNS[j + 2], computed, expected, diff))
    return Comparison(not failures, max_diff, failures)
