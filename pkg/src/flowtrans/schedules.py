"""Interpolation schedules, latent blending, and the discrete inference grid.

A schedule maps progress m in [0, 1] to a mix weight w in [0, 1]; the
blended latent is x = (1 - w) * z1 + w * z2. All schedule math runs in
float64; latent payloads are widened before the weights are applied.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import LatentTensor
from .errors import DomainError, ShapeError, TagError


class ScheduleKind(enum.Enum):
    LINEAR = "linear"
    EXPONENTIAL = "expo"
    COSINE = "cosine"


@dataclass(frozen=True)
class Schedule:
    """Progress-to-weight map. Linear and cosine are parameter-free.

    The exponential weight is normalized over [0, 1]:

        w(m) = (exp(k (m - 1)) - exp(-k)) / (1 - exp(-k) + eps)

    with min = exp(-k) and max = 1 being the extremes of exp(k (m - 1))
    on the unit interval, so w(0) = 0 exactly and w(1) falls short of 1
    by at most eps.
    """

    kind: ScheduleKind
    k: float | None = None
    eps: float = 1e-6

    def __post_init__(self):
        if self.kind is ScheduleKind.EXPONENTIAL:
            if self.k is None or not self.k > 0:
                raise DomainError("exponential schedule needs steepness k > 0")
            if not self.eps > 0:
                raise DomainError("eps must be positive")
        elif self.k is not None:
            raise DomainError(f"{self.kind.value} schedule takes no steepness k")

    @staticmethod
    def linear() -> "Schedule":
        return Schedule(ScheduleKind.LINEAR)

    @staticmethod
    def cosine() -> "Schedule":
        return Schedule(ScheduleKind.COSINE)

    @staticmethod
    def exponential(k: float, eps: float = 1e-6) -> "Schedule":
        return Schedule(ScheduleKind.EXPONENTIAL, k=k, eps=eps)

    def label(self) -> str:
        if self.kind is ScheduleKind.EXPONENTIAL:
            return f"expo(k={self.k:g})"
        return self.kind.value


def schedule_from_name(name: str, k: float | None = None) -> Schedule:
    """Build a schedule from its CLI name (`linear`, `expo`, `cosine`)."""
    try:
        kind = ScheduleKind(name)
    except ValueError:
        raise DomainError(f"unknown schedule {name!r}") from None
    if kind is ScheduleKind.EXPONENTIAL:
        if k is None:
            raise DomainError("expo schedule requires --expo-k")
        return Schedule.exponential(k)
    if k is not None:
        raise DomainError("--expo-k is only valid with the expo schedule")
    return Schedule(kind)


def mix_weight(sched: Schedule, m):
    """Weight w(m) of the schedule; elementwise on arrays, float on scalars."""
    m_arr = np.asarray(m, dtype=np.float64)
    if np.any(m_arr < 0.0) or np.any(m_arr > 1.0):
        raise DomainError("progress m must lie in [0, 1]")
    if sched.kind is ScheduleKind.LINEAR:
        w = m_arr.copy()
    elif sched.kind is ScheduleKind.COSINE:
        w = 0.5 * (1.0 - np.cos(np.pi * m_arr))
    else:
        lo = math.exp(-sched.k)
        w = (np.exp(sched.k * (m_arr - 1.0)) - lo) / (1.0 - lo + sched.eps)
    if np.ndim(m) == 0:
        return float(w)
    return w


def interpolate(sched: Schedule, z1: LatentTensor, z2: LatentTensor, m: float) -> LatentTensor:
    """Blend two latents: x = (1 - w) * z1 + w * z2 with w = mix_weight(sched, m)."""
    if z1.data.shape != z2.data.shape:
        raise ShapeError(f"latent shapes differ: {z1.data.shape} vs {z2.data.shape}")
    if z1.codec_tag != z2.codec_tag:
        raise TagError(f"latents from different codecs: {z1.codec_tag!r} vs {z2.codec_tag!r}")
    w = mix_weight(sched, m)
    out_dtype = np.result_type(z1.data.dtype, z2.data.dtype)
    a = z1.data.astype(np.float64, copy=False)
    b = z2.data.astype(np.float64, copy=False)
    x = (1.0 - w) * a + w * b
    return LatentTensor(x.astype(out_dtype), z1.codec_tag)


@dataclass(frozen=True)
class StepGrid:
    """Monotone progress values s_0 = 0 < ... < s_{T-1} = 1 plus their deltas."""

    steps: np.ndarray
    deltas: np.ndarray

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.float64)
        if steps.ndim != 1 or steps.size < 2:
            raise DomainError("step grid needs at least two points")
        if steps[0] != 0.0 or steps[-1] != 1.0:
            raise DomainError("step grid must start at 0 and end at 1")
        if np.any(np.diff(steps) <= 0.0):
            raise DomainError("step grid must be strictly increasing")

    def __len__(self) -> int:
        return self.steps.size


def schedule_grid(sched: Schedule, T: int) -> StepGrid:
    """Step grid s_i = w(i / (T - 1)) under the given schedule.

    Endpoints are pinned to 0 and 1 exactly; for the exponential schedule
    this absorbs the eps slack so that the deltas always telescope to 1.
    """
    if not isinstance(T, int) or isinstance(T, bool) or T < 2:
        raise DomainError(f"step count T must be an integer >= 2, got {T}")
    u = np.arange(T, dtype=np.float64) / (T - 1)
    steps = np.asarray(mix_weight(sched, u), dtype=np.float64)
    steps[0] = 0.0
    steps[-1] = 1.0
    return StepGrid(steps=steps, deltas=np.diff(steps))


def inference_grid(T: int) -> StepGrid:
    """The cosine inference grid s_i = (1 - cos(pi * i / (T - 1))) / 2."""
    return schedule_grid(Schedule.cosine(), T)
