"""
Error hierarchy shared by every pforvec module.
"""


class PforvecError(Exception):
    """Base class for all library errors."""

    def __init__(self, message="", node_id=None):
        super(PforvecError, self).__init__(message)
        self.message = message
        self.node_id = node_id

    def __str__(self):
        if self.node_id is None:
            return self.message
        return f'{self.message} (node {self.node_id})'


# Tensor kernels

class TensorError(PforvecError):
    pass


class IncompatibleShapes(TensorError):
    pass


class DTypeMismatch(TensorError):
    pass


class RankError(TensorError):
    pass


class AxisOutOfRange(TensorError):
    pass


class DuplicateAxis(TensorError):
    pass


class IndexOutOfBounds(TensorError):

    def __init__(self, message="", index=None, node_id=None):
        super(IndexOutOfBounds, self).__init__(message, node_id=node_id)
        self.index = index


class IndexCollision(TensorError):
    pass


class IncompleteCover(TensorError):
    pass


class BadPermutation(TensorError):
    pass


# Graph IR

class GraphError(PforvecError):
    pass


class UnknownInput(GraphError):
    pass


class UnknownKind(GraphError):
    pass


class BadAttr(GraphError):
    pass


class ArityMismatch(GraphError):
    pass


class NonScalarCondition(GraphError):
    pass


class CycleDetected(GraphError):

    def __init__(self, message="", nodes=()):
        super(CycleDetected, self).__init__(message)
        self.nodes = sorted(nodes)


class ParseError(GraphError):

    def __init__(self, message="", line=0, column=0):
        super(ParseError, self).__init__(f'{message} at line {line}, column {column}')
        self.line = line
        self.column = column


# Execution

class ExecutionError(PforvecError):
    pass


class ShapeVariance(ExecutionError):
    pass


class BudgetExceeded(ExecutionError):
    pass


class MissingFeed(ExecutionError):
    pass


# Vectorization

class VectorizeError(PforvecError):
    pass


class StatefulNotSupported(VectorizeError):
    pass


# Autodiff

class AutodiffError(PforvecError):
    pass


class NonScalarOutput(AutodiffError):
    pass


class NonDifferentiableOp(AutodiffError):
    pass


class ShapeMismatch(AutodiffError):
    pass


# Harness

class HarnessError(PforvecError):
    pass


class UnknownModel(HarnessError):
    pass


class UnknownDemo(HarnessError):
    pass
