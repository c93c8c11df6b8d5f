"""Exception hierarchy for shrinkerlab.

Exit-code mapping used by the CLI: InvalidInputError -> 2,
SolverStallError -> 3, TopologyDriftError -> 4.
"""


class ShrinkerLabError(Exception):
    """Base class for all shrinkerlab errors."""


class InvalidInputError(ShrinkerLabError):
    """Malformed or out-of-range input (non-finite point, n < 2, ...)."""


class MeshTopologyError(ShrinkerLabError):
    """Topology is undefined (non-manifold or non-orientable mesh)."""


class ClipDegenerateError(ShrinkerLabError):
    """Sphere clipping hit a tangency that nudging could not resolve."""


class OrbitAmbiguousError(ShrinkerLabError):
    """Two candidate partner vertices inside the matching tolerance."""


class NotEquivariantError(ShrinkerLabError):
    """A mapped vertex has no partner inside the matching tolerance."""


class AxisTangentError(ShrinkerLabError):
    """Axis-surface intersection too close to tangential to count."""


class SeedGeometryError(ShrinkerLabError):
    """Seed parameters produce a non-embedded or degenerate surface."""


class NotClippedError(ShrinkerLabError):
    """Boundary vertices were expected on the clipping sphere but are not."""


class SolverStallError(ShrinkerLabError):
    """An evolution phase could not make progress.

    Carries the last mesh and trace so the caller can checkpoint them.
    """

    def __init__(self, message, mesh=None, trace=None, stage=None):
        super().__init__(message)
        self.mesh = mesh
        self.trace = trace
        self.stage = stage


class LineSearchStallError(SolverStallError):
    """Backtracking line search exhausted its halving budget."""


class RefineStalledError(SolverStallError):
    """Gauss-Newton damping grew past its budget without progress."""


class TopologyDriftError(ShrinkerLabError):
    """Genus, boundary loops or component count changed during a run."""

    def __init__(self, message, mesh=None, trace=None, stage=None):
        super().__init__(message)
        self.mesh = mesh
        self.trace = trace
        self.stage = stage
