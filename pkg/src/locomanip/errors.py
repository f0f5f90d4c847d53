"""Exception types shared across the toolkit."""


class LocomanipError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(LocomanipError):
    """Image/intrinsics dimensions do not agree."""


class InvalidTargetDepth(LocomanipError):
    """Requested pixel has no valid depth value."""


class InvalidKeypointDepth(LocomanipError):
    """A semantic keypoint has no valid depth; carries the offending label."""

    def __init__(self, label: str, message: str | None = None):
        self.label = label
        super().__init__(message or f"no valid depth at keypoint '{label}'")


class NoPathError(LocomanipError):
    """A* could not connect start and goal."""


class InvalidEndpoint(LocomanipError):
    """Path endpoint out of bounds or occupied."""


class DegenerateDirection(LocomanipError):
    """A primitive was given a zero-length direction vector."""


class IKFailure(LocomanipError):
    """IK did not converge; carries the terminal residuals."""

    def __init__(self, position_error: float, orientation_error: float,
                 sample_index: int | None = None):
        self.position_error = position_error
        self.orientation_error = orientation_error
        self.sample_index = sample_index
        where = "" if sample_index is None else f" at sample {sample_index}"
        super().__init__(
            f"IK failed{where}: pos_err={position_error:.3e} m, "
            f"ori_err={orientation_error:.3e} rad"
        )


class ProviderError(LocomanipError):
    """Decision provider failed or returned an unusable answer."""


class StateError(LocomanipError):
    """Planner state update referenced an unknown sub-task."""


class GenerationError(LocomanipError):
    """Scenario generator exhausted its rejection budget."""
