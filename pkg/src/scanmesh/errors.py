"""Exception types shared across the pipeline stages."""


class ScanMeshError(Exception):
    """Base class for all scanmesh errors."""


class BehindCamera(ScanMeshError):
    """Point has non-positive depth in the camera frame."""


class NonPositiveDepth(ScanMeshError):
    """Unprojection requested with depth <= 0."""


class OutOfBounds(ScanMeshError):
    """Continuous sample point lies outside the grid."""


class NoSources(ScanMeshError):
    """Multi-view filtering invoked with an empty source set."""


class DegenerateGeometry(ScanMeshError):
    """Triangulation design matrix is rank deficient (parallel rays)."""


class CheiralityViolation(ScanMeshError):
    """Triangulated point is behind one or more cameras."""


class SolverFailure(ScanMeshError):
    """Normal equations remained singular after damping escalation."""


class DivergenceDetected(ScanMeshError):
    """A training loss became non-finite."""


class EmptySurface(ScanMeshError):
    """No sign change found: the isosurface does not intersect the grid."""


class EmptyMesh(ScanMeshError):
    """Operation requires a non-empty mesh."""


class AtlasOverflow(ScanMeshError):
    """Texel budget is too small for the mesh; reports the required size."""

    def __init__(self, required: int, budget: int):
        super().__init__(
            f"atlas budget {budget} too small, need at least {required}"
        )
        self.required = required
        self.budget = budget


class ImageTooSmall(ScanMeshError):
    """Image smaller than the SSIM window."""


class SizeMismatch(ScanMeshError):
    """Images compared at different sizes."""


class InvalidSpec(ScanMeshError):
    """Unknown synthetic scene specification."""


class StageError(ScanMeshError):
    """Pipeline stage failure, tagged with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
