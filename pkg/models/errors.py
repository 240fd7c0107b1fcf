"""
Exception types shared by the recommendation pipeline.
"""

from typing import Optional


class TMERError(Exception):
    """Base class for every error raised by the pipeline."""


class IngestError(TMERError, ValueError):
    """A row of an input file could not be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None, source: Optional[str] = None):
        self.line_number = line_number
        self.source = source
        location = ""
        if source:
            location += f"{source}"
        if line_number is not None:
            location += f":{line_number}" if location else f"line {line_number}"
        super().__init__(f"{location}: {message}" if location else message)


class ContractViolation(TMERError, ValueError):
    """A precondition, shape or invariant of an operation was violated."""


class NumericContractError(ContractViolation):
    """Non-finite values reached an operation that requires finite input."""


class UnknownNodeError(TMERError, KeyError):
    """A NodeId (or node key) that the HIN does not contain."""


class MissingTokenError(TMERError, KeyError):
    """A path node has no path-token vector."""

    def __init__(self, node: int):
        self.node = node
        super().__init__(f"node {node} has no path-token vector")


class MissingArtifactError(TMERError, FileNotFoundError):
    """An upstream stage artifact is missing."""

    def __init__(self, path: str, stage: str):
        self.path = path
        self.stage = stage
        super().__init__(f"missing artifact {path}: run stage '{stage}' first")


class CheckpointFormatError(TMERError, ValueError):
    """A checkpoint or binary embedding file is malformed."""
