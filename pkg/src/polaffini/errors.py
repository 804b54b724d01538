"""Exception hierarchy.

Errors fall in two families so that callers (notably the command line)
can map them onto exit codes: :class:`DataError` for problems with the
inputs and :class:`NumericalError` for failures of the numerics.
"""


class PolaffiniError(Exception):
    """Base class. ``stage`` names the pipeline stage once known."""

    stage = None

    def with_stage(self, stage):
        if self.stage is None:
            self.stage = stage
            self.args = (f"[{stage}] {self.args[0] if self.args else ''}",) + self.args[1:]
        return self


class DataError(PolaffiniError):
    pass


class NumericalError(PolaffiniError):
    pass


class PairingMismatch(DataError):
    pass


class InsufficientPoints(DataError):
    pass


class EmptyPointSet(DataError):
    pass


class DegenerateInput(DataError):
    pass


class NoTransforms(DataError):
    pass


class GridMismatch(DataError):
    pass


class GridTooSmall(DataError):
    pass


class InterpolationMismatch(DataError):
    pass


class MalformedHeader(DataError):
    pass


class UnsupportedDatatype(DataError):
    pass


class DimensionalityUnsupported(DataError):
    pass


class DegenerateConfiguration(NumericalError):
    pass


class DegenerateNeighborhood(NumericalError):
    def __init__(self, index, msg=None):
        self.index = index
        super().__init__(msg or f"neighborhood {index} is degenerate")


class LogUndefined(NumericalError):
    pass


class Singular(NumericalError):
    pass
