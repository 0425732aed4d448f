"""Exception hierarchy shared across the engine."""


class HierMemError(Exception):
    """Base class for all engine errors."""


class InvalidArgumentError(HierMemError):
    """A caller-supplied value violates an operation precondition."""


class NotFoundError(HierMemError):
    """A referenced node id does not exist in the graph."""


class BackendError(HierMemError):
    """A model backend failed after retries. Retryable at the request level."""


class ExtractionError(HierMemError):
    """A backend returned output that could not be used (e.g. empty model output)."""


class ConfigError(HierMemError):
    """Configuration file is malformed or out of range.

    ``key_path`` identifies the offending key, dotted (e.g. ``scoring.k``).
    """

    def __init__(self, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")


class PersistenceError(HierMemError):
    """Event log or snapshot I/O failure."""


class CorruptLogError(PersistenceError):
    """The event log contains an unreadable record.

    Replay stops at the last valid record; ``position`` is the byte offset of
    the first bad line and ``last_seq`` the last sequence number applied.
    """

    def __init__(self, position: int, last_seq: int, message: str):
        self.position = position
        self.last_seq = last_seq
        super().__init__(f"corrupt log record at byte {position} (last good seq {last_seq}): {message}")
