class ContractViolation(ValueError):
    """Raised when a caller breaks an operation's precondition (CLI exit code 2)."""


class FormatError(Exception):
    """
    Raised when a PGM image, checkpoint or CSV file is malformed (CLI exit code 3).

    Attributes:
        offset (int | None): Byte offset where parsing failed, when known.
    """

    def __init__(self, message: str, offset: int = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class MeasurementError(Exception):
    """Raised when the LV geometry pipeline cannot produce a measurement."""


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes NaN or infinite."""

    def __init__(self, lr: float, epoch: int, batch_index: int, loss: float):
        super().__init__(
            f"Loss diverged ({loss}) at epoch {epoch}, batch {batch_index}, lr={lr:g}"
        )
        self.lr = lr
        self.epoch = epoch
        self.batch_index = batch_index
        self.loss = loss
