"""Error types shared across gmae.

Every domain error is a ValueError carrying the process exit code the CLI
reports for it. Argparse usage errors keep argparse's own exit code (2).
"""


class GmaeError(ValueError):
    exit_code = 1


class InvalidInputError(GmaeError):
    exit_code = 3


class ConfigError(GmaeError):
    exit_code = 3

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class MissingCheckpointError(GmaeError):
    exit_code = 4


class CorruptCheckpointError(GmaeError):
    exit_code = 5


class CheckpointVersionError(GmaeError):
    exit_code = 6


class CheckpointShapeError(GmaeError):
    exit_code = 7

    def __init__(self, tensor: str, expected: tuple, actual: tuple):
        self.tensor = tensor
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(
            f"tensor '{tensor}' has shape {self.actual} in checkpoint, "
            f"config expects {self.expected}"
        )


class NonFiniteError(GmaeError):
    exit_code = 8


class GradcheckFailure(GmaeError):
    exit_code = 9


class ImageLoadError(GmaeError):
    exit_code = 10

    def __init__(self, path, reason: str):
        self.path = str(path)
        super().__init__(f"cannot load image '{path}': {reason}")
