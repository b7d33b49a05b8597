"""Error types raised across the package."""


class NumericalBlowupError(FloatingPointError):
    """A simulated state became non-finite."""

    def __init__(self, step, path=None):
        self.step = step
        self.path = path
        where = f" on path {path}" if path is not None else ""
        super().__init__(f"non-finite state at step {step}{where}")


class DominationUnavailableError(ValueError):
    """The domain is unbounded along the requested direction."""


class DomainError(ValueError):
    """A parameter lies outside the natural domain of a family."""


class NoMinimizerError(ValueError):
    """An objective has no unique minimizer for the given sample."""


class MeanRangeError(ValueError):
    """A weighted mean falls outside the mean range of a family."""


class LikelihoodOverflowError(OverflowError):
    """A likelihood-ratio product overflowed double precision."""

    def __init__(self, path):
        self.path = int(path)
        super().__init__(f"likelihood ratio overflow at path {self.path}")


class LineSearchError(RuntimeError):
    """No step satisfying the Wolfe conditions was found."""
