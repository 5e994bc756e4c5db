"""Exception hierarchy shared by the solver modules and the CLI."""


class NCPError(Exception):
    """Base class for all errors raised by ncpopt."""


class TreeFormatError(NCPError):
    """Malformed tree or preference document."""


class InvalidTreeError(NCPError):
    """Tree fails structural validation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid scenario tree: " + "; ".join(self.problems))


class MissingStrategyError(NCPError):
    def __init__(self, node):
        self.node = node
        super().__init__(f"strategy has no position for non-leaf node {node!r}")


class PreferenceError(NCPError):
    """Invalid utility or distortion parameters."""


class HypothesisError(NCPError):
    """A standing assumption of the existence theory is violated.

    Raised, for instance, when an expected-utility problem is posed with a
    utility that stays bounded below: optimisers need not exist then.
    """


class ArbitrageError(NCPError):
    def __init__(self, message, witness=None):
        self.witness = witness
        super().__init__(message)


class GridTooNarrowError(NCPError):
    """The wealth search could not locate a required level; extend the grid."""
