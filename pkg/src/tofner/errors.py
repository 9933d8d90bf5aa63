"""Exception hierarchy shared by every module."""


class TofError(Exception):
    """Base class for all tofner errors."""


class ParseError(TofError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LabelingError(TofError):
    """A tag names an entity type outside the active label set, or uses an unknown prefix."""


class BioError(TofError, ValueError):
    """A tag sequence violates the BIO scheme where validity was a precondition."""


class AlignmentError(TofError):
    def __init__(self, message: str, example_id: str | None = None):
        self.example_id = example_id
        if example_id is not None:
            message = f"[{example_id}] {message}"
        super().__init__(message)


class ConfigError(TofError):
    pass


class ContractError(TofError, ValueError):
    pass


class TrainingError(TofError):
    def __init__(self, message: str, step: int | None = None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class ResumeError(TofError):
    pass
