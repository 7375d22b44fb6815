"""Conditional latent flow-matching engine for radar-to-optical chip translation."""

from .core import ImageChip, LatentTensor, OPTICAL_LABELS, RADAR_LABELS
from .schedules import (Schedule, ScheduleKind, StepGrid, inference_grid,
                        interpolate, mix_weight, schedule_grid)

__all__ = [
    "ImageChip", "LatentTensor", "OPTICAL_LABELS", "RADAR_LABELS",
    "Schedule", "ScheduleKind", "StepGrid", "inference_grid",
    "interpolate", "mix_weight", "schedule_grid",
]

__version__ = "0.1.0"
