"""Exception types shared across the package."""


class ProvlmError(Exception):
    """Base class for all package-specific errors."""


class InvalidTransformError(ProvlmError):
    """Rotation matrix is not orthonormal with determinant +1."""


class PixelBoundsError(ProvlmError):
    """Pixel coordinate outside the image."""


class InvalidDepthError(ProvlmError):
    """Depth value is zero or negative where a valid depth is required."""


class NoDepthError(ProvlmError):
    """No pixel in a set carries a valid depth."""


class IllConditionedError(ProvlmError):
    """Covariance is singular below the regularization floor."""


class UnknownRelationError(ProvlmError):
    """Relationship string outside the supported set."""


class MissingVertexError(ProvlmError):
    """Edge or feature refers to a vertex id not present in the graph."""


class InvalidPlanError(ProvlmError):
    """Subtask plan is empty, has dangling dependencies, or is cyclic."""


class MissingSubtaskError(ProvlmError):
    """Motion record refers to an unknown subtask id."""


class NoActiveSubtaskError(ProvlmError):
    """Prompt construction requires an active subtask but none exists."""


class MalformedResponseError(ProvlmError):
    """Backend payload failed schema validation."""


class BackendUnavailableError(ProvlmError):
    """Transport to the backend failed after retries."""


class ConfigError(ProvlmError):
    """Scenario or run configuration is invalid or incomplete."""


class AccountingError(ProvlmError):
    """Metric counters are inconsistent (successes exceed attempts)."""
