"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid run configuration. Carries the full list of field errors."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class DisconnectedArrayError(RuntimeError):
    """The confident-pair adjacency graph does not connect all cameras."""

    def __init__(self, components):
        self.components = [sorted(c) for c in components]
        super().__init__(
            "camera adjacency graph is disconnected: components "
            + ", ".join(str(c) for c in self.components)
        )
