"""Local defect-correction finite element eigensolvers for convection-diffusion operators."""
from .assembly import (FeFunction, ProblemCoeffs, adjoint_functional, assemble_a, assemble_b,
                       assemble_functional, prolongate)
from .composite import CompositeFunction
from .eigen import (EigenResult, adjoint_align, coarse_eigenpair, rayleigh_quotient,
                    solve_adjoint_smallest, solve_smallest)
from .linalg import Factorization, factorize, solve, solve_transpose
from .mesh import (CompositePartition, DomainSpec, Mesh, SubdomainSpec, build_mesh,
                   composite_partition, extract_submesh, refine_uniform)
from .scheme import (LevelReport, Mode, SchemeConfig, SchemeResult, error_report, plan_schedule,
                     run, three_level, two_grid)

__version__ = "0.1.0"
