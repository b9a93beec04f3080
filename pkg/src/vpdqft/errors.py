"""Exception types shared by the algebra, the regulator and the ledger."""
from __future__ import annotations


class VpdError(Exception):
    """Base class for every error raised by this package."""


class IndexSpaceError(VpdError):
    pass


class VarianceError(VpdError):
    pass


class MalformedExpressionError(VpdError):
    pass


class SubstitutionError(VpdError):
    pass


class OpenSpinorLineError(VpdError):
    pass


class OnShellSingularityError(VpdError):
    pass


class MomentumConservationError(VpdError):
    pass


class MalformedGraphError(VpdError):
    pass


class DomainError(VpdError):
    pass


class FiniteOrderNotice(VpdError):
    """Raised when an expansion order beyond the supported range is requested.

    ``order`` carries the order that was asked for. The terms beyond four
    insertions are finite and are not computed.
    """

    def __init__(self, order: int):
        super().__init__(f"order {order} > 4 contributes no pole; only orders 1..4 are computed")
        self.order = order


class FormMismatchError(VpdError):
    pass


class PrecisionError(VpdError):
    pass


class DegenerateFrameError(VpdError):
    pass


class SupportViolationError(VpdError):
    pass


class UnsupportedGaugeError(VpdError):
    pass


class UnknownFieldError(VpdError):
    pass


class InternalSignError(VpdError):
    pass


class GaugeFunctionalError(VpdError):
    pass


class GoldenMismatch(VpdError):
    """Raised when golden constants disagree with their recomputation.

    ``entries`` is a list of (name, expected, computed) tuples.
    """

    def __init__(self, entries):
        self.entries = list(entries)
        lines = [f"{n}: golden={e} computed={c}" for n, e, c in self.entries]
        super().__init__("golden constant mismatch:\n" + "\n".join(lines))
