"""Exception types shared across the package.

The CLI maps these onto exit codes, so library code raises them instead of
bare ``ValueError`` whenever the failure category matters to a caller.
"""


class SchemaError(ValueError):
    """Input data does not match the expected record schema."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class CapacityError(ValueError):
    """A circuit does not fit the model's maximum node count."""


class NumericError(ArithmeticError):
    """A numeric quantity is undefined (zero-norm vector, non-finite loss)."""


class ProfileMismatchError(ValueError):
    """A checkpoint was produced for a different dataset profile."""
