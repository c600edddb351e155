"""Exception hierarchy.

Every error carries a machine-readable ``reason`` string (the snake_case
class name) so the command-line front end can report it verbatim.
"""

import re


class GraphpassError(Exception):
    """Base class for all library errors."""

    @property
    def reason(self):
        return re.sub(r"(?<!^)(?=[A-Z])", "_", type(self).__name__).lower()


# graph construction and lookup
class GraphError(GraphpassError, ValueError):
    pass


class NonSymmetricWeight(GraphError):
    pass


class NonPositiveWeightOrMeasure(GraphError):
    pass


class DisconnectedGraph(GraphError):
    pass


class SelfLoop(GraphError):
    pass


class UnknownVertex(GraphError, KeyError):
    pass


class BadParams(GraphpassError, ValueError):
    pass


# operators
class GraphMismatch(GraphpassError, ValueError):
    pass


class BadExponent(GraphpassError, ValueError):
    pass


class NonPositivePotential(GraphpassError, ValueError):
    pass


class EigenSolverFailure(GraphpassError, RuntimeError):
    pass


# model
class CoefficientOutOfRange(GraphpassError, ValueError):
    pass


class MissingMetadata(GraphpassError, ValueError):
    pass


class MissingSecondPartials(GraphpassError, ValueError):
    pass


# solver
class NoConvergence(GraphpassError, RuntimeError):
    def __init__(self, message, iterate=None, iterations=0):
        super().__init__(message)
        self.iterate = iterate
        self.iterations = iterations


class SingularJacobian(NoConvergence):
    pass


class BadFarPoint(GraphpassError, ValueError):
    pass


class SymmetryViolated(GraphpassError, RuntimeError):
    pass


class FoundFewer(GraphpassError, RuntimeError):
    """Raised by enumeration when fewer than ``K`` solutions were found.

    The solutions that were found are attached as ``records``.
    """

    def __init__(self, records, requested):
        super().__init__(f"found {len(records)} of {requested} requested solution pairs")
        self.records = records if isinstance(records, list) else list(records)
        self.requested = requested

    @property
    def count(self):
        return len(self.records)


# command line
class UnknownFlag(GraphpassError, ValueError):
    pass


class MissingInput(GraphpassError, ValueError):
    pass


class MalformedFile(GraphpassError, ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line
