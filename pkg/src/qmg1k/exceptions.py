class InvalidParameterError(ValueError):
    """Raised when a distribution, scenario or run configuration is invalid."""


class QubitCapError(ValueError):
    """Raised when a statevector run would exceed the configured qubit cap."""


class ProposalSupportError(ValueError):
    """Raised when a rejection filter sees a sample with zero proposal mass."""
