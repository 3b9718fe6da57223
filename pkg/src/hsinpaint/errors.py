"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Two arrays that must share a shape do not."""


class CubeFormatError(ValueError):
    """A cube, mask or dictionary file pair is malformed."""


class CertificationError(RuntimeError):
    """A denoiser or network failed its non-expansiveness certification."""


class NumericalAbort(FloatingPointError):
    """An iterate became non-finite; carries the iteration where it happened."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
