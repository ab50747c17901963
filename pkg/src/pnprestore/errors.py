"""Shared error types."""


class DivergenceError(RuntimeError):
    """An iterative procedure stopped making progress and was aborted."""
