"""Exception types shared across the toolkit."""


class ConvTicketError(Exception):
    """Base class for all structured errors raised by this package."""


class ShapeMismatchError(ConvTicketError):
    """Tensor, filter, or mask shapes do not line up."""


class ArchitectureError(ConvTicketError):
    """A network description is internally inconsistent."""


class UnsupportedActivationError(ConvTicketError):
    """The requested operation is not defined for this activation."""


class DomainError(ConvTicketError):
    """A numeric argument lies outside the valid range."""


class FileFormatError(ConvTicketError):
    """A serialized artifact is malformed or has the wrong version."""


class ParameterBoundError(ConvTicketError):
    """Target parameters exceed the |theta| <= 1 bound.

    Carries a hint with the offending magnitude and a suggested rescale.
    """

    def __init__(self, max_abs, hint=None):
        self.max_abs = max_abs
        self.hint = hint or (
            "target parameters must satisfy |theta| <= 1; max |theta| = %.6g. "
            "Divide all weights by %.6g and record the factor in output_scale, "
            "or regenerate the target with a smaller theta bound." % (max_abs, max_abs)
        )
        super().__init__(self.hint)


class PlanError(ConvTicketError):
    """A source plan cannot be built for the given target and options."""


class ConstructionError(ConvTicketError):
    """Ticket construction failed outright (inconsistent plan or source)."""
