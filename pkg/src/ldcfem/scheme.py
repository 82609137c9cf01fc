"""Three-level and multilevel local defect-correction eigenvalue schemes.

A run goes coarse eigenpair -> two mesoscopic source problems -> a sequence
of local corrections on shrinking subdomains around the singularity (or,
in parallel mode, on several disjoint subdomains per level).  Every local
problem is solved on ``refine(restrict(previous mesh, subdomain))``, so the
local step size halves per level while the unknown count stays put.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .assembly import (FeFunction, ProblemCoeffs, adjoint_functional, assemble_full,
                       assemble_functional, prolongate)
from .composite import CompositeFunction, joint_partition
from .eigen import EigenResult, coarse_eigenpair, rayleigh_quotient
from .errors import LDCError, ScheduleError, TransferError
from .linalg import Factorization
from .mesh import (DomainKind, DomainSpec, Mesh, SubdomainSpec, build_mesh, local_mesh,
                   refine_uniform)

log = logging.getLogger(__name__)


class Mode(str, Enum):
    TWO_GRID = "two-grid"
    THREE_LEVEL = "three-level"
    MULTILEVEL = "multilevel"
    PARALLEL = "parallel"
    SYMMETRIC = "symmetric"


# high-accuracy first eigenvalues used as surrogate truth, keyed by (domain, b)
REFERENCE_LAMBDA = {
    ("lshape", (0.0, 3.0)): 11.8897,
    ("lshape", (1.0, 1.0)): 10.1397,
    ("lshape", (0.0, 10.0)): 34.6397,
    ("slit", (0.0, 3.0)): 10.621,
    ("slit", (1.0, 1.0)): 8.871,
    ("slit", (0.0, 10.0)): 33.371,
}


def reference_lambda(domain: DomainSpec, coeffs: ProblemCoeffs) -> float | None:
    return REFERENCE_LAMBDA.get((domain.kind.value, tuple(float(x) for x in coeffs.convection)))


def _dyadic_exponent(x: Fraction, what: str) -> int:
    x = Fraction(x)
    if x <= 0 or x.numerator != 1 or x.denominator & (x.denominator - 1):
        raise ScheduleError(f"{what} = {x} is not of the form 1/2^k")
    return x.denominator.bit_length() - 1


def dof_estimate(domain: DomainSpec, n: int) -> int:
    """Unknown count of ``build_mesh(domain, n)`` without building it."""
    if domain.kind is DomainKind.LSHAPE:
        return (2 * n + 1) ** 2 - n * n - 8 * n
    if domain.kind is DomainKind.SLIT:
        return (2 * n + 1) ** 2 - 9 * n
    x0, x1, y0, y1 = domain.bounds
    return int(round((x1 - x0) * n - 1)) * int(round((y1 - y0) * n - 1))


def canonical_subdomains(domain: DomainSpec, level: int, parallel: bool = False):
    """``(primal, adjoint)`` correction regions at ``level`` for the model domains."""
    i = level
    t = Fraction(1, 2**i)
    if domain.kind is DomainKind.LSHAPE:
        core_scale = t / 2 if parallel else t
        core = SubdomainSpec.scaled_lshape(core_scale, i, "core")
    elif domain.kind is DomainKind.SLIT:
        core = SubdomainSpec.scaled_slit(t, i, "core")
    else:
        raise ScheduleError(f"no canonical subdomains for {domain.kind.value}")
    if not parallel:
        return (core,), (core,)
    top = SubdomainSpec.rectangle(-2 * t, 2 * t, 1 - t, 1, i, "top")
    left = SubdomainSpec.rectangle(Fraction(-1, 2) - t, Fraction(-1, 2) + t, -1, -1 + t, i, "bottom_left")
    if domain.kind is DomainKind.LSHAPE:
        return (core, top), (core, left)
    right = SubdomainSpec.rectangle(Fraction(1, 2) - t, Fraction(1, 2) + t, -1, -1 + t, i, "bottom_right")
    return (core, top), (core, right, left)


@dataclass
class SchemeConfig:
    """Run plan.  Local step sizes are ``h_i = w / 2**i``."""

    domain: DomainSpec
    coeffs: ProblemCoeffs
    H: Fraction
    w: Fraction
    levels: int
    primal_subdomains: tuple = ()
    adjoint_subdomains: tuple = ()
    mode: Mode = Mode.MULTILEVEL
    r: int = 1
    s: Fraction = Fraction(2, 3)
    s2: Fraction = Fraction(2, 3)
    gamma1: Fraction = Fraction(2, 3)
    gamma2: Fraction = Fraction(2, 3)
    tol: float = 1e-10
    reference: float | None = None
    dof_budget: int | None = None

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.H = Fraction(self.H)
        self.w = Fraction(self.w)
        kH = _dyadic_exponent(self.H, "H")
        kw = _dyadic_exponent(self.w, "w")
        if kw < kH:
            raise ScheduleError(f"mesoscopic size {self.w} is coarser than H = {self.H}")
        if self.mode is Mode.TWO_GRID and self.levels:
            raise ScheduleError("two-grid mode has no local levels")
        if self.mode is Mode.THREE_LEVEL and self.levels != 1:
            raise ScheduleError("three-level mode uses exactly one local level")
        self.primal_subdomains = tuple(tuple(x) for x in self.primal_subdomains)
        self.adjoint_subdomains = tuple(tuple(x) for x in self.adjoint_subdomains)
        if self.levels and len(self.primal_subdomains) < self.levels:
            raise ScheduleError(f"need primal subdomains for {self.levels} levels")
        if self.levels and not self.symmetric and len(self.adjoint_subdomains) < self.levels:
            raise ScheduleError(f"need adjoint subdomains for {self.levels} levels")
        if self.dof_budget is not None:
            n = dof_estimate(self.domain, self.n_w)
            if n > self.dof_budget:
                raise ScheduleError(f"mesoscopic grid has {n} unknowns, budget is {self.dof_budget}")

    @property
    def symmetric(self) -> bool:
        return self.mode is Mode.SYMMETRIC

    @property
    def n_H(self) -> int:
        return self.H.denominator

    @property
    def n_w(self) -> int:
        return self.w.denominator

    def h(self, i: int) -> Fraction:
        return self.w / 2**i


def plan_schedule(domain: DomainSpec, H, levels: int, s=None, gamma=None, r: int = 1,
                  mode: Mode | str = Mode.MULTILEVEL, coeffs: ProblemCoeffs | None = None,
                  tol: float = 1e-10, dof_budget: int | None = None) -> SchemeConfig:
    """Pick ``w`` from ``w^r ~ H^(r+s-1+gamma)`` and the canonical subdomains.

    The exponent of ``w`` is rounded toward the coarser dyadic grid and then
    capped so that ``w <= H/2``.
    """
    mode = Mode(mode)
    default = Fraction(2, 3) if domain.kind is DomainKind.LSHAPE else Fraction(1, 2)
    s = Fraction(s) if s is not None else default
    gamma = Fraction(gamma) if gamma is not None else default
    coeffs = coeffs or ProblemCoeffs()
    if mode is Mode.TWO_GRID:
        levels = 0
    elif mode is Mode.THREE_LEVEL:
        levels = 1
    elif levels < 1:
        raise ScheduleError("need at least one local level")
    H = Fraction(H)
    kH = _dyadic_exponent(H, "H")
    kw = max(math.floor(kH * (r + s - 1 + gamma) / r), kH + 1)
    parallel = mode is Mode.PARALLEL
    subs = [canonical_subdomains(domain, i, parallel) for i in range(1, levels + 1)]
    return SchemeConfig(
        domain=domain, coeffs=coeffs, H=H, w=Fraction(1, 2**kw), levels=levels,
        primal_subdomains=tuple(p for p, _ in subs),
        adjoint_subdomains=tuple(a for _, a in subs),
        mode=mode, r=r, s=s, s2=s, gamma1=gamma, gamma2=gamma, tol=tol,
        reference=reference_lambda(domain, coeffs), dof_budget=dof_budget,
    )


@dataclass
class LevelReport:
    """One eigenvalue column: level -1 is the coarse grid, 0 the mesoscopic grid."""

    level: int
    lam: float
    lam_adjoint: float
    dofs: int
    error: float | None = None
    seconds: float = 0.0
    subdomain_dofs: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return {-1: "H", 0: "w"}.get(self.level, f"h{self.level}")


class _LocalSpace:
    """Matrices and factorization of one local (or mesoscopic) mesh."""

    def __init__(self, mesh: Mesh, coeffs: ProblemCoeffs):
        self.mesh = mesh
        self.full = assemble_full(mesh, coeffs)
        idx = mesh.interior
        self.A = self.full[0][idx][:, idx].tocsr()
        self.B = self.full[1][idx][:, idx].tocsr()
        self.fac = Factorization(self.A)


@dataclass(eq=False)
class SchemeResult:
    config: SchemeConfig
    coarse: EigenResult
    reports: list
    states: list  # (primal, adjoint) composites, index 0 = mesoscopic
    meshes: dict

    @property
    def dof_H(self) -> int:
        return self.reports[0].dofs

    @property
    def dof_w(self) -> int:
        return self.reports[1].dofs

    @property
    def lambdas(self) -> list:
        return [r.lam for r in self.reports]

    @property
    def final(self) -> tuple:
        return self.states[-1]


class _Run:
    def __init__(self, cfg: SchemeConfig):
        self.cfg = cfg
        self.spaces: dict[int, _LocalSpace] = {}
        self.meshes: dict[tuple[str, int], Mesh] = {}
        self.reports: list[LevelReport] = []
        self.states: list = []

    def space(self, mesh: Mesh) -> _LocalSpace:
        sp_ = self.spaces.get(id(mesh))
        if sp_ is None:
            sp_ = self.spaces[id(mesh)] = _LocalSpace(mesh, self.cfg.coeffs)
        return sp_

    def report(self, level, lam, lam_adj, dofs, t0, sub=None):
        ref = self.cfg.reference
        self.reports.append(LevelReport(level, float(lam), float(lam_adj), int(dofs),
                                        None if ref is None else abs(lam - ref),
                                        time.perf_counter() - t0, sub or {}))

    # -- steps ----------------------------------------------------------
    def step1_coarse(self) -> EigenResult:
        t0 = time.perf_counter()
        cfg = self.cfg
        coarse_mesh = build_mesh(cfg.domain, cfg.n_H)
        self.meshes[("", -1)] = coarse_mesh
        coarse = coarse_eigenpair(coarse_mesh, cfg.coeffs, cfg.tol)
        if cfg.symmetric:
            coarse = EigenResult(coarse.lam, coarse.u, coarse.u, 1.0, coarse.residual, coarse.residual)
        self.coarse = coarse
        self.report(-1, coarse.lam, coarse.lam, coarse_mesh.n_unknowns, t0)
        return coarse

    def step2_meso(self):
        t0 = time.perf_counter()
        cfg, coarse = self.cfg, self.coarse
        mesh = coarse.mesh
        for _ in range(cfg.n_w.bit_length() - cfg.n_H.bit_length()):
            mesh = refine_uniform(mesh)
        self.meshes[("", 0)] = mesh
        sp_ = self.space(mesh)
        rhs = coarse.lam * (sp_.B @ prolongate(coarse.u, mesh).unknowns)
        u = CompositeFunction(FeFunction.from_unknowns(mesh, sp_.fac.solve(rhs)))
        if cfg.symmetric:
            u_adj = None
            lam = rayleigh_quotient(u, u, coeffs=cfg.coeffs)
        else:
            rhs = coarse.lam * (sp_.B @ prolongate(coarse.u_adj, mesh).unknowns)
            u_adj = CompositeFunction(FeFunction.from_unknowns(mesh, sp_.fac.solve_transpose(rhs)))
            lam = rayleigh_quotient(u, u_adj, coeffs=cfg.coeffs)
        self.states.append((u, u_adj))
        self.lam = lam
        self.spaces.clear()  # factorizations are not reused across levels
        self.report(0, lam, lam, mesh.n_unknowns, t0)
        return u, u_adj, lam

    def local_mesh(self, s: SubdomainSpec, level: int) -> Mesh:
        key = (s.name, level)
        if key in self.meshes:
            return self.meshes[key]
        parent = self.meshes.get((s.name, level - 1)) if level > 1 else self.meshes[("", 0)]
        if parent is None:
            raise ScheduleError(f"subdomain chain '{s.name}' has no level {level - 1} mesh")
        mesh = self.meshes[key] = local_mesh(parent, s)
        expected = float(self.cfg.h(level))
        if abs(mesh.spacing - expected) > 1e-15:
            raise ScheduleError(f"level {level} mesh has step {mesh.spacing}, expected {expected}")
        return mesh

    def local_correct(self, level: int):
        t0 = time.perf_counter()
        cfg = self.cfg
        u, u_adj = self.states[-1]
        lam = self.lam
        new, sub_dofs = [], {}
        for s in cfg.primal_subdomains[level - 1]:
            sp_ = self.space(self.local_mesh(s, level))
            F = assemble_functional(sp_.mesh, u, lam, cfg.coeffs, sp_.full)
            new.append((s, FeFunction.from_unknowns(sp_.mesh, sp_.fac.solve(F))))
            sub_dofs[s.name] = sp_.mesh.n_unknowns
        u_next = u.with_corrections(new)
        if cfg.symmetric:
            u_adj_next = None
            lam_next = rayleigh_quotient(u_next, u_next, coeffs=cfg.coeffs)
        else:
            new = []
            for s in cfg.adjoint_subdomains[level - 1]:
                sp_ = self.space(self.local_mesh(s, level))
                F = adjoint_functional(sp_.mesh, u_adj, lam, cfg.coeffs, sp_.full)
                new.append((s, FeFunction.from_unknowns(sp_.mesh, sp_.fac.solve_transpose(F))))
                sub_dofs.setdefault(s.name + "*", sp_.mesh.n_unknowns)
            u_adj_next = u_adj.with_corrections(new)
            part = joint_partition(u_next, u_adj_next)
            lam_next = rayleigh_quotient(u_next, u_adj_next, part, cfg.coeffs)
        self.states.append((u_next, u_adj_next))
        self.lam = lam_next
        self.spaces.clear()
        dofs = sum(v for k, v in sub_dofs.items() if not k.endswith("*"))
        self.report(level, lam_next, lam_next, dofs, t0, sub_dofs)
        log.info("level %d: lambda = %.8f (%.1fs)", level, lam_next, self.reports[-1].seconds)
        return u_next, u_adj_next, lam_next

    def result(self) -> SchemeResult:
        return SchemeResult(self.cfg, self.coarse, self.reports, self.states, self.meshes)


def run(cfg: SchemeConfig) -> SchemeResult:
    """Coarse solve, mesoscopic solves, then ``cfg.levels`` local corrections."""
    r = _Run(cfg)
    r.step1_coarse()
    r.step2_meso()
    for i in range(1, cfg.levels + 1):
        try:
            r.local_correct(i)
        except LDCError as exc:
            raise type(exc)(f"level {i}: {exc}") from exc
    return r.result()


def three_level(cfg: SchemeConfig) -> SchemeResult:
    """Coarse grid, mesoscopic grid, one local correction on the first subdomain."""
    r = _Run(cfg)
    r.step1_coarse()
    r.step2_meso()
    r.local_correct(1)
    return r.result()


def two_grid(cfg: SchemeConfig) -> SchemeResult:
    r = _Run(cfg)
    r.step1_coarse()
    r.step2_meso()
    return r.result()


# -- error analysis -------------------------------------------------------

def reference_eigenpair(domain: DomainSpec, coeffs: ProblemCoeffs, n: int,
                        cache_dir: str | Path | None = None, tol: float = 1e-11) -> EigenResult:
    """High-resolution eigenpair on ``build_mesh(domain, n)``, optionally cached as ``.npz``."""
    mesh = build_mesh(domain, n)
    path = None
    if cache_dir is not None:
        b = "_".join(f"{x:g}" for x in coeffs.convection)
        path = Path(cache_dir) / f"ref_{domain.kind.value}_b{b}_n{n}.npz"
        if path.exists():
            z = np.load(path)
            u = FeFunction(mesh, z["u"])
            ua = FeFunction(mesh, z["u_adj"])
            return EigenResult(float(z["lam"]), u, ua, float(z["pairing"]), float(z["res"]), float(z["res_adj"]))
    ref = coarse_eigenpair(mesh, coeffs, tol)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, lam=ref.lam, u=ref.u.values, u_adj=ref.u_adj.values, pairing=ref.pairing,
                 res=ref.residual, res_adj=ref.residual_adj)
    return ref


def error_report(state, reference: FeFunction, F: SubdomainSpec | None = None) -> dict:
    """L2, H1 and H1(domain minus closure(F)) errors of ``state`` against ``reference``.

    ``state`` is a composite (or plain FE) function; both are normalized in
    L2 and sign-aligned before comparison.  ``reference`` must live on a mesh
    at least as fine as every mesh inside ``state``.
    """
    from .assembly import element_matrices

    if isinstance(state, FeFunction):
        state = CompositeFunction(state)
    mesh = reference.mesh
    finest = min([state.base.mesh.spacing] + [e.mesh.spacing for _, e in state.corrections])
    if mesh.spacing > finest + 1e-15:
        raise TransferError("reference mesh is coarser than the state")
    uh = state(mesh.vertices)
    lap = ProblemCoeffs()
    A_loc, M_loc = element_matrices(mesh.vertices[mesh.triangles], lap)
    t = mesh.triangles

    def quad(loc, x, y, mask=None):
        X, Y = x[t], y[t]
        vals = np.einsum("tk,tkl,tl->t", Y, loc, X)
        return vals.sum() if mask is None else vals[mask].sum()

    ref = reference.values / np.sqrt(quad(M_loc, reference.values, reference.values))
    uh = uh / np.sqrt(quad(M_loc, uh, uh))
    if quad(M_loc, uh, ref) < 0:
        uh = -uh
    d = ref - uh
    l2 = np.sqrt(max(quad(M_loc, d, d), 0.0))
    semi = np.sqrt(max(quad(A_loc, d, d), 0.0))
    out = {"l2": l2, "h1": np.sqrt(l2**2 + semi**2)}
    if F is not None:
        outside = ~F.contains(mesh.centroids)
        l2o = quad(M_loc, d, d, outside)
        semio = quad(A_loc, d, d, outside)
        out["h1_outside_F"] = np.sqrt(max(l2o + semio, 0.0))
    return out


def empirical_orders(errors: Sequence[float], ratio: float = 2.0) -> list[float]:
    """``log(e_{k-1} / e_k) / log(ratio)`` for consecutive errors."""
    e = np.asarray(errors, dtype=float)
    return list(np.log(e[:-1] / e[1:]) / np.log(ratio))


def three_level_order(lams: Sequence[float], ratio: float = 2.0) -> float:
    """Observed eigenvalue order from the last three levels, without a reference value.

    ``log((l_{k-2} - l_{k-1}) / (l_{k-1} - l_k)) / log(ratio)``
    """
    if len(lams) < 3:
        raise ValueError("need at least three eigenvalues")
    a, b, c = (float(x) for x in lams[-3:])
    return math.log(abs(a - b) / abs(b - c)) / math.log(ratio)
