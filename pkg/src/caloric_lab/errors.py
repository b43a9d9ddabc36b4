"""Exception types with stage labels; the CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Invalid or incomplete run configuration (exit code 3)."""


class NumericalAbort(RuntimeError):
    """A solver stopped because its state became invalid (exit code 4)."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
