"""Error hierarchy shared by training, serving, and the CLI."""
from __future__ import annotations


class SidecarError(Exception):
    """Base class for everything this package raises on purpose."""


class ConfigError(SidecarError):
    """Bad configuration: unknown keys, missing files, invalid values."""


class DataError(SidecarError):
    """Input files that parse but violate the documented record shapes."""


class TrainingDiverged(SidecarError):
    """The loss became non-finite; carries the offending step."""

    def __init__(self, step: int, value: float):
        super().__init__(f"training diverged at step {step}: loss = {value}")
        self.step = step
        self.value = value


class ServiceBusy(SidecarError):
    """A model's request queue is full; the caller should retry."""
