"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class QsummError(Exception):
    exit_code = 1


class ValidationError(QsummError, ValueError):
    exit_code = 1


class DataFormatError(ValidationError):
    """Malformed input file (JSON, embeddings, model container)."""


class SourceError(QsummError):
    exit_code = 2


class UnavailableError(SourceError):
    """Abstract not cached and the store is offline."""

    def __init__(self, ref):
        super().__init__(f"abstract not available offline: {ref}")
        self.ref = ref


class FetchError(SourceError):
    """Network retrieval failed; safe to retry."""

    retryable = True

    def __init__(self, ref, reason):
        super().__init__(f"failed to fetch {ref}: {reason}")
        self.ref = ref
        self.reason = reason


class EmptySourcesError(SourceError):
    pass


class LeakageError(QsummError):
    """A test question was visible while fitting."""

    exit_code = 1


class NumericalError(QsummError, ArithmeticError):
    exit_code = 3


class DivergenceError(NumericalError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss
