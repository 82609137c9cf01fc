"""Exception hierarchy shared by the mesh, solver and scheme layers."""


class LDCError(Exception):
    """Base class for all package errors."""


class AlignmentError(LDCError):
    """A domain or subdomain boundary does not lie on mesh edges."""


class PartitionError(LDCError):
    """Composite cells overlap or leave a gap."""


class TransferError(LDCError):
    """A function cannot be transferred because the meshes are not nested."""


class CoefficientError(LDCError):
    """Problem coefficients violate strong ellipticity or positivity."""


class SingularMatrixError(LDCError):
    """Factorization hit a numerically zero pivot."""


class ResidualError(LDCError):
    """A checked sparse solve missed the backward-error bound."""


class UnsupportedSpectrumError(LDCError):
    """The target eigenvalue is complex, clustered, or defective."""


class DegeneratePairingError(LDCError):
    """The primal/adjoint pairing b(u, u*) is numerically zero."""


class ScheduleError(LDCError):
    """A requested schedule is inconsistent or exceeds the DOF budget."""


class FixtureError(LDCError):
    """Computed reports do not have the shape of the reference table."""
