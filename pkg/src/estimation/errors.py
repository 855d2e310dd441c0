"""Exception hierarchy shared by the estimation and simulation packages."""


class DiffusionError(Exception):
    """Base class for every error raised by this project."""


class InvalidNodeError(DiffusionError, ValueError):
    pass


class InvalidParameterError(DiffusionError, ValueError):
    pass


class InvalidObservationError(DiffusionError, ValueError):
    pass


class InvalidWeightsError(DiffusionError, ValueError):
    pass


class IncompleteNeighbourhoodError(DiffusionError, ValueError):
    pass


class InvalidStatisticsError(DiffusionError, ValueError):
    pass


class TopologyError(DiffusionError, ValueError):
    pass


class NumericalError(DiffusionError):
    """Runtime numerical failure (as opposed to bad input)."""


class SingularStatisticsError(NumericalError):
    def __init__(self, message, condition=None, index=None):
        super().__init__(message)
        self.condition = condition
        # position in a stack of statistics, when raised by a batched solve
        self.index = index


class DegenerateUpdateError(NumericalError):
    pass


class NodeStepError(DiffusionError):
    """A per-node failure inside a network step, annotated with node id and phase."""

    def __init__(self, node, phase, cause):
        super().__init__(f"node {node}, {phase} phase: {cause}")
        self.node = node
        self.phase = phase
        self.cause = cause


class NumericalNodeStepError(NodeStepError, NumericalError):
    pass


def node_step_error(node, phase, cause):
    """Wrap ``cause`` so that numerical failures stay catchable as ``NumericalError``."""
    if isinstance(cause, NumericalError):
        return NumericalNodeStepError(node, phase, cause)
    return NodeStepError(node, phase, cause)
