"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid or inconsistent run configuration; CLI exit code 1."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; CLI exit code 2."""
