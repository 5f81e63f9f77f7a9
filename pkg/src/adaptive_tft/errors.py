"""Exception hierarchy shared by every stage of the pipeline."""


class AdaptiveTFTError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class CandleParseError(AdaptiveTFTError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientDataError(AdaptiveTFTError):
    pass


class UnpatternableError(AdaptiveTFTError):
    """The segment is shorter than the end-pattern length."""


class NoTrainableCategoriesError(AdaptiveTFTError):
    def __init__(self, message: str, skipped=None):
        self.skipped = list(skipped or [])
        super().__init__(message)


class TrainingDivergedError(AdaptiveTFTError):
    pass


class ArchiveError(AdaptiveTFTError):
    pass


class ChecksumError(ArchiveError):
    pass


class FormatVersionError(ArchiveError):
    pass


class HygieneError(AdaptiveTFTError):
    """A prediction range overlaps the training range of the registry."""


class InfeasibleSpecError(AdaptiveTFTError):
    pass
