from typing import Any, Optional


class GruSnfError(Exception):
    exit_code = 1


class ConfigError(GruSnfError):
    exit_code = 2


class DataError(GruSnfError):
    exit_code = 3


class ContractError(DataError, ValueError):
    pass


class ShapeError(DataError, ValueError):
    pass


class NormalizationError(DataError, ValueError):
    def __init__(self, metric: str, value: float) -> None:
        super().__init__(
            f"Degenerate pooled range for {metric}: min == max == {value!r}"
        )
        self.metric = metric
        self.value = value


class KeypointFormatError(DataError):
    def __init__(self, message: str, path: Any = None, line: Optional[int] = None):
        location = ""
        if path is not None:
            location += f"{path}"
        if line is not None:
            location += f":{line}"
        super().__init__(f"{location}: {message}" if location else message)
        self.path = path
        self.line = line


class NumericError(GruSnfError, ArithmeticError):
    exit_code = 4

    def __init__(self, message: str, index: Any = None) -> None:
        super().__init__(message if index is None else f"{message} (at {index})")
        self.index = index


class TrainingError(NumericError):
    def __init__(
        self,
        message: str,
        epoch: int,
        batch: Optional[int] = None,
        last_model: Any = None,
        curve: Any = None,
    ) -> None:
        context = f"epoch={epoch}" + (f", batch={batch}" if batch is not None else "")
        super().__init__(f"{message} [{context}]")
        self.epoch = epoch
        self.batch = batch
        self.last_model = last_model
        self.curve = curve


class PipelineIOError(GruSnfError):
    exit_code = 5


class CheckpointError(PipelineIOError):
    pass


class StageError(GruSnfError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"Stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", GruSnfError.exit_code)
