"""Exception hierarchy shared by the solver modules."""


class GraphError(ValueError):
    """A computational graph violates its structural contract."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"invalid computational graph: {lines}")


class DimensionError(ValueError):
    """A state or perturbation has the wrong shape for its node."""

    def __init__(self, node, message):
        self.node = node
        super().__init__(f"node {node!r}: {message}")


class InfeasiblePointError(ValueError):
    """KKT assembly was asked to linearize at a point with nonzero constraint residual."""


class SingularKKTError(ArithmeticError):
    """Dense KKT factorization hit a negligible pivot."""

    def __init__(self, pivot, message=None):
        self.pivot = pivot
        super().__init__(message or f"KKT matrix is singular at pivot {pivot}")


class SingularPivotError(ArithmeticError):
    """A clique's eliminate-block could not be pivoted."""

    def __init__(self, bag, message=None):
        self.bag = bag
        super().__init__(message or f"singular eliminate-block in bag {bag}")


class SingularQuuError(ArithmeticError):
    """The control Hessian of a backward pass is not positive definite."""

    def __init__(self, stage):
        self.stage = stage
        super().__init__(f"Q_uu is not positive definite at stage {stage}")


class OptimizationError(RuntimeError):
    """Base for failures of the outer Newton/DDP loop; carries the partial trace."""

    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)


class NonDescentError(OptimizationError):
    """Regularization reached its ceiling without producing a descent step."""


class LinesearchFailError(OptimizationError):
    """Backtracking could not satisfy the sufficient-decrease condition."""
