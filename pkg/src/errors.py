"""Exception hierarchy shared by every posekit module."""
from typing import Optional


class PoseKitError(Exception):
    """Base class for all posekit errors."""


class DegenerateInput(PoseKitError, ValueError):
    pass


class BehindCamera(PoseKitError, ValueError):
    pass


class InvalidDepth(PoseKitError, ValueError):
    pass


class MissingCoarse(PoseKitError, ValueError):
    pass


class InvalidParam(PoseKitError, ValueError):
    pass


class TooFewVertices(PoseKitError, ValueError):
    pass


class OutOfRange(PoseKitError, ValueError):
    pass


class ShapeMismatch(PoseKitError, ValueError):
    pass


class NotNormalized(PoseKitError, ValueError):
    pass


class NonFinite(PoseKitError, ValueError):
    pass


class InvalidWindow(PoseKitError, ValueError):
    pass


class EmptyRender(PoseKitError):
    pass


class EmptyInput(PoseKitError, ValueError):
    pass


class MissingAsset(PoseKitError):
    pass


class NonRigid(PoseKitError, ValueError):
    pass


class MissingCamera(PoseKitError):
    pass


class SpecViolation(PoseKitError):
    def __init__(self, scale: int, expected: int, actual: int, what: str = "input channels"):
        self.scale = scale
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"scale {scale}: expected {expected} {what}, got {actual}"
        )


class ParseError(PoseKitError, ValueError):
    def __init__(self, message: str, location: Optional[str] = None):
        self.location = location
        super().__init__(f"{message} ({location})" if location else message)


class FieldCount(ParseError):
    pass
