"""Exception types shared across the package."""


class StarcrsError(Exception):
    """Base class for all starcrs errors."""


class ShapeMismatchError(StarcrsError, ValueError):
    """Tensor or sequence dimensions do not line up."""


class EmptyInputError(StarcrsError, ValueError):
    """An operation received an empty input it cannot define a value for."""


class ConfigError(StarcrsError, ValueError):
    """Invalid configuration. May carry several messages at once."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ParseError(StarcrsError, ValueError):
    """A data file could not be parsed. Carries the offending line number."""

    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class TrainingError(StarcrsError, RuntimeError):
    """Non-finite gradients or other unrecoverable training state."""


class ContextOverflowError(StarcrsError, RuntimeError):
    """A prompt assembly exceeds the backbone's position budget."""


class GradCheckError(StarcrsError, RuntimeError):
    """The finite-difference gradient check could not be carried out."""


class CheckpointError(StarcrsError, RuntimeError):
    """A checkpoint file is malformed or incompatible."""
