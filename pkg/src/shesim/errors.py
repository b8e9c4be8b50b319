"""Exception types shared across the package."""


class NumericFailure(RuntimeError):
    """An iterative numeric routine could not reach its tolerance.

    Carries whatever diagnostics the caller needs (achieved error,
    contraction factor, offending site/step) in ``info``.
    """

    def __init__(self, message, **info):
        super().__init__(message)
        self.info = dict(info)


class SchemaError(ValueError):
    """Manifest validation failed; ``errors`` lists every violation."""

    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class SingularIntegrand(ValueError):
    """The integrand vanishes or blows up inside the integration range."""
