"""Exception hierarchy shared by every stage.

Every error carries a human-readable ``detail`` and an ``exit_code`` that the
CLI uses when it aborts, the way HTTP handlers carry a status code.
"""
from __future__ import annotations

from typing import Any, Optional, Sequence


class MotionPipelineError(Exception):
    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(MotionPipelineError):
    exit_code = 2


class ShapeError(MotionPipelineError):
    def __init__(self, op: str, shapes: Sequence[tuple[int, ...]]):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        super().__init__(f"Shape mismatch in {op}: {', '.join(str(s) for s in self.shapes)}")


class BackwardBeforeForwardError(MotionPipelineError):
    pass


class NonScalarOutputError(MotionPipelineError):
    pass


class NonFiniteGradientError(MotionPipelineError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"Non-finite gradient for parameter '{path}'")


class CheckpointFormatError(MotionPipelineError):
    pass


class UnknownFamilyError(MotionPipelineError):
    def __init__(self, family: str):
        self.family = family
        super().__init__(f"Unknown motion family '{family}'")


class InsufficientFramesError(MotionPipelineError):
    pass


class CorpusFormatError(MotionPipelineError):
    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"Line {line}: {reason}")


class QuantizationError(MotionPipelineError):
    pass


class InvalidTokenError(MotionPipelineError):
    def __init__(self, position: int, index: int, limit: int):
        self.position = position
        self.index = index
        super().__init__(f"Token {index} at position {position} is outside [0, {limit})")


class AssignmentMismatchError(MotionPipelineError):
    pass


class TrainingDivergedError(MotionPipelineError):
    def __init__(self, detail: str, checkpoint_path: Optional[str] = None):
        self.checkpoint_path = checkpoint_path
        if checkpoint_path:
            detail = f"{detail} (last good checkpoint: {checkpoint_path})"
        super().__init__(detail)


class EmptyTextError(MotionPipelineError):
    pass


class CotConfigurationError(MotionPipelineError):
    exit_code = 2


class CotBackendError(MotionPipelineError):
    pass


class CotGenerationError(MotionPipelineError):
    def __init__(self, detail: str, report: Any):
        self.report = report
        super().__init__(detail)


class TokenizerMismatchError(MotionPipelineError):
    pass


class ContextOverflowError(MotionPipelineError):
    pass


class GroupSizeError(MotionPipelineError):
    pass


class LengthMismatchError(MotionPipelineError):
    pass


class NonFiniteRatioError(MotionPipelineError):
    pass


class InsufficientSamplesError(MotionPipelineError):
    pass


class MetricError(MotionPipelineError):
    def __init__(self, metric: str, cause: Exception):
        self.metric = metric
        self.cause = cause
        super().__init__(f"{metric}: {cause}")


class UnparsableOutputError(MotionPipelineError):
    def __init__(self, raw: str):
        self.raw = raw
        super().__init__(f"Generated output does not follow the response grammar: {raw}")
