"""Exception hierarchy for the rapidfeat pipeline."""


class RapidError(Exception):
    """Base class for all rapidfeat errors."""


class MalformedScanError(RapidError):
    """Scan file violates the packed binary layout or contains non-finite values."""


class LabelMismatchError(RapidError):
    """Label file length does not match the point cloud."""


class LabelsRequiredError(RapidError):
    """Operation needs per-point labels but the cloud has none."""


class EmptySceneError(RapidError):
    """Synthetic scene has no primitives."""


class InsufficientPointsError(RapidError):
    """Subset too small for the requested neighbor count."""


class UndefinedAngleError(RapidError):
    """Cylindrical angles are undefined for a zero-norm point."""


class FormatError(RapidError):
    """Feature container is corrupt, truncated, or has an unknown version."""


class ContractError(RapidError):
    """Tensor shapes or argument combinations violate an operation contract."""


class UndefinedMetricError(RapidError):
    """No class has a defined IoU, so the mean is undefined."""
