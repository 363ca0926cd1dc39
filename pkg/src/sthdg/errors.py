"""Exception hierarchy for the space-time HDG solver."""


class SthdgError(Exception):
    """Base class for all solver errors."""


class UnsupportedDegree(SthdgError, ValueError):
    pass


class DegenerateMap(SthdgError):
    pass


class InvalidMotion(SthdgError):
    pass


class DegenerateCell(SthdgError):
    pass


class InconsistentTopology(SthdgError):
    pass


class MeshFormatError(SthdgError, ValueError):
    pass


class SingularLocalBlock(SthdgError):
    def __init__(self, cell, message=None):
        self.cell = int(cell)
        super().__init__(message or f"local cell block of cell {self.cell} is singular")


class SingularGlobal(SthdgError):
    pass


class ProjectionSingular(SthdgError):
    pass


class NoConvergence(SthdgError):
    def __init__(self, max_iters, status):
        self.max_iters = max_iters
        self.status = status
        super().__init__(
            f"Picard iteration did not converge in {max_iters} iterations "
            f"(deltas u={status.delta_u:.3e}, p={status.delta_p:.3e})"
        )


class SlabError(SthdgError):
    """Wraps an error raised while solving a particular slab."""

    def __init__(self, slab_index, cause):
        self.slab_index = slab_index
        self.cause = cause
        super().__init__(f"slab {slab_index}: {cause}")


class InvalidInitialCondition(SthdgError, ValueError):
    pass
