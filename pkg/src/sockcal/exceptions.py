"""Exception hierarchy for sockcal."""


class SockcalError(Exception):
    """Base class for all errors raised by this package."""


class InvalidAxisError(SockcalError, ValueError):
    pass


class ShapeError(SockcalError, ValueError):
    """Raised when an array does not have the dimensions the chain requires."""


class ArityError(SockcalError, ValueError):
    """A joint value was given to a fixed frame, or omitted for an actuated one."""


class DescriptionError(SockcalError):
    """Base class for robot-description parse failures."""


class MalformedDescriptionError(DescriptionError):
    pass


class MissingLinkError(DescriptionError):
    pass


class BranchingError(DescriptionError):
    """No unique serial path exists between the requested links."""


class UnsupportedJointError(DescriptionError):
    pass


class DatasetSchemaError(SockcalError, ValueError):
    pass


class DegenerateGradientError(SockcalError, ArithmeticError):
    """Socket means coincide, so the distance term has no gradient."""


class NonFiniteCostError(SockcalError, ArithmeticError):
    pass


class IKConvergenceError(SockcalError):
    pass


class UnreachableSocketError(SockcalError):
    pass
