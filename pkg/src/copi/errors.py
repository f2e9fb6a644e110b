"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with arguments violating its preconditions."""


class FormatError(ValueError):
    """A data or checkpoint file does not match its binary layout."""


class ConfigError(ValueError):
    """Inconsistent training or run configuration."""


class DivergenceError(RuntimeError):
    """A parameter became non-finite during training."""

    def __init__(self, layer: int, epoch: int, name: str):
        super().__init__(f"non-finite values in {name} of layer {layer} at epoch {epoch}")
        self.layer = layer
        self.epoch = epoch
        self.name = name
