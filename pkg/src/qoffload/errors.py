"""Exception hierarchy shared by every qoffload component."""

from __future__ import annotations


class QOffloadError(Exception):
    """Base class for all errors raised by this package."""


# -- OpenQASM ---------------------------------------------------------------


class QasmError(QOffloadError):
    pass


class QasmSyntaxError(QasmError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"line {line}, col {col}: {message}"
        super().__init__(message)


class UnsupportedFeature(QasmError):
    pass


class UndeclaredRegister(QasmError):
    pass


class IndexOutOfRange(QasmError):
    pass


class PlaceholderOutOfRange(QasmError):
    pass


class UnusedParameter(UserWarning):
    """Emitted when a binding carries more values than the source uses."""


# -- simulation -------------------------------------------------------------


class SimulationError(QOffloadError):
    pass


class QubitCapExceeded(SimulationError):
    pass


class MeasurementInOraclePath(SimulationError):
    pass


class NoMeasurements(SimulationError):
    pass


# -- transpiler -------------------------------------------------------------


class TranspileError(QOffloadError):
    pass


class UnsupportedGate(TranspileError):
    pass


class IrreducibleGate(TranspileError):
    pass


class TooManyQubits(TranspileError):
    pass


class MeasurementPresent(TranspileError):
    pass


class DimensionMismatch(TranspileError):
    pass


# -- backend service / protocol ---------------------------------------------


class BackendError(QOffloadError):
    """An error response from the backend. ``code`` mirrors the wire code."""

    code = "BackendError"

    def __init__(self, message: str = ""):
        super().__init__(message)
        self.message = message


class MalformedRequest(BackendError):
    code = "MalformedRequest"


class ShotsOutOfRange(BackendError):
    code = "ShotsOutOfRange"


class UnknownJob(BackendError):
    code = "UnknownJob"


class NotCompleted(BackendError):
    code = "NotCompleted"


class JobFailed(BackendError):
    code = "JobFailed"


class PayloadTooLarge(BackendError):
    code = "PayloadTooLarge"


BACKEND_ERRORS: dict[str, type[BackendError]] = {
    cls.code: cls
    for cls in (MalformedRequest, ShotsOutOfRange, UnknownJob, NotCompleted, JobFailed, PayloadTooLarge)
}


class BackendUnreachable(QOffloadError):
    pass


# -- runtime ----------------------------------------------------------------


class RuntimeErrorBase(QOffloadError):
    pass


class UnknownHandle(RuntimeErrorBase):
    pass


class KernelFileNotFound(RuntimeErrorBase):
    pass


class TaskFailed(RuntimeErrorBase):
    """Raised by ``taskwait`` for the first failed task; the cause is chained."""

    def __init__(self, task_id: int, label: str, cause: BaseException | None = None):
        self.task_id = task_id
        self.label = label
        self.cause = cause
        detail = f"{type(cause).__name__}: {cause}" if cause is not None else "failed"
        super().__init__(f"task {task_id} ({label}) failed: {detail}")


# -- observables ------------------------------------------------------------


class ObservableError(QOffloadError):
    pass


class BadCoefficient(ObservableError):
    pass


class BadPauliChar(ObservableError):
    pass


class LengthMismatch(ObservableError):
    pass


class KeyLengthMismatch(ObservableError):
    pass


class GroupCountMismatch(ObservableError):
    pass


# -- optimizer --------------------------------------------------------------


class InvalidBounds(QOffloadError, ValueError):
    pass
