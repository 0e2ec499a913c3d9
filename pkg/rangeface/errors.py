"""
Exceptions raised by the pipeline.

🔍 EXPLANATION:
Every failure the pipeline knows about is a RangefaceError. The two branches
decide the process exit status when a management command fails:
- DataError     → exit 3 (bad input files, impossible requests)
- NumericError  → exit 4 (degenerate geometry, zero variance, ...)
"""


class RangefaceError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class DataError(RangefaceError):
    exit_code = 3


class NumericError(RangefaceError):
    exit_code = 4


class MeshParseError(DataError):
    """Raised by the mesh/landmark parsers; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f'{message}, line {line}'
        super().__init__(message)


class LandmarkError(DataError):
    pass


class GenerationError(DataError):
    pass


class CropError(DataError):
    pass


class MatchError(DataError):
    pass


class FusionError(DataError):
    pass


class EvaluationError(DataError):
    pass


class ArtifactError(DataError):
    """A grid, subspace or score-matrix file could not be read."""


class AlignmentError(NumericError):
    pass


class ResampleError(NumericError):
    pass


class TrainingError(NumericError):
    pass


class ScoreNormalizationError(NumericError):
    pass
