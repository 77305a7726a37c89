class CurioRankError(Exception):
    """Base class for pipeline errors."""


class CurioRankWarning(UserWarning):
    """Recoverable anomaly (cold entity, degenerate vector, loss increase)."""


class ParseError(CurioRankError, ValueError):
    """Malformed line in a MovieLens `.dat` file.

    Parameters:
        path (str): file being parsed
        line_number (int): 1-based line number
        line (str): offending line
        reason (str): what was wrong with it
    """

    def __init__(self, path, line_number, line, reason="malformed line"):
        self.path = str(path)
        self.line_number = line_number
        self.line = line
        super().__init__(f"{self.path}:{line_number}: {reason}: {line!r}")


class DataValidationError(CurioRankError, ValueError):
    pass


class ConfigError(CurioRankError, ValueError):
    pass


class DivergenceError(CurioRankError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, model, epoch, loss):
        self.model = model
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"{model} training diverged at epoch {epoch} (loss={loss})")


class UnknownEntityError(CurioRankError, KeyError):
    def __init__(self, kind, entity_id):
        self.kind = kind
        self.entity_id = entity_id
        super().__init__(f"unknown {kind}: {entity_id}")

    def __str__(self):
        return self.args[0]


class MissingSnapshotError(CurioRankError):
    def __init__(self, stage):
        self.stage = stage
        super().__init__(f"missing snapshot: {stage}")


class StageError(CurioRankError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {cause}")
