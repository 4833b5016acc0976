"""Exception types shared across the package."""


class GraphFormatError(ValueError):
    """Malformed edge-list, split or negatives file."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class NodeIdError(ValueError):
    """A node id outside ``[0, num_nodes)``."""


class ConfigError(ValueError):
    """Invalid configuration or hyperparameter combination."""


class BudgetOverflowError(ValueError):
    """A subgraph sample larger than the token budget."""


class NumericError(ArithmeticError):
    """Non-finite values appeared during a forward pass or training."""

    def __init__(self, message, layer=None, checkpoint=None):
        super().__init__(message)
        self.layer = layer
        self.checkpoint = checkpoint


class ConvergenceError(ArithmeticError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class CheckFailed(AssertionError):
    """A theory check or benchmark verification did not hold."""
