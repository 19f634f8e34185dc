"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration: bad parameters, missing files, schema violations."""


class DeadlockError(RuntimeError):
    """The simulator ran out of events while instructions remain.

    Carries the set of blocked cores and the dependency each one waits on.
    """

    def __init__(self, blocked: dict):
        self.blocked = dict(blocked)
        detail = ", ".join(
            f"core {c} waiting on dep {d}" for c, d in sorted(blocked.items())
        )
        super().__init__(f"simulation deadlock: {detail or 'no runnable core'}")


class PipelineError(RuntimeError):
    """Detection pipeline failure: missing or corrupt artifacts, internal errors."""
