"""Exception types raised by vehiclepose."""


class VehiclePoseError(Exception):
    """Base class for all package errors."""


class NonPositiveDepth(VehiclePoseError):
    """A point sits behind (or on) the camera plane."""


class BehindCamera(NonPositiveDepth):
    """A model or ground-truth keypoint has non-positive depth in some camera."""


class DegenerateRays(VehiclePoseError):
    """Two viewing rays are parallel, so there is no unique closest point."""


class DegenerateConfiguration(VehiclePoseError):
    """Weighted point set is collinear or coincident; rigid alignment is underdetermined."""


class AllZeroConfidence(VehiclePoseError):
    """Every keypoint confidence in some camera is zero."""


class InvalidRig(VehiclePoseError):
    pass


class NotARotation(VehiclePoseError):
    pass


class LengthMismatch(VehiclePoseError):
    pass
