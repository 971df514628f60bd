"""Exception types shared across the package."""


class DepthFuseError(Exception):
    """Base class for all errors raised by depthfuse."""


class MalformedHeader(DepthFuseError):
    pass


class UnexpectedEof(DepthFuseError):
    pass


class NonFiniteValue(DepthFuseError):
    pass


class IoFailure(DepthFuseError):
    pass


class OutOfRange(DepthFuseError):
    pass


class ZeroDimension(DepthFuseError):
    pass


class AlreadyInverse(DepthFuseError):
    pass


class TooSmall(DepthFuseError):
    pass


class DimMismatch(DepthFuseError):
    pass


class NoConvergence(DepthFuseError):
    pass


class ShapeMismatch(DepthFuseError):
    pass


class BackwardBeforeForward(DepthFuseError):
    pass


class ScaleCountMismatch(DepthFuseError):
    pass


class EmptyValidSet(DepthFuseError):
    pass


class EmptyPairSet(DepthFuseError):
    pass


class InvalidConfig(DepthFuseError):
    pass


class VersionMismatch(DepthFuseError):
    pass


class CorruptFile(DepthFuseError):
    pass


class NonFiniteLoss(DepthFuseError):
    pass


class OutOfRangeInput(DepthFuseError):
    pass


class DegenerateSystem(DepthFuseError):
    pass


class NonPositiveForLog(DepthFuseError):
    pass
