"""Annealing schedule: decoding progress -> diffusion time -> noise scale.

Diffusion time runs downward: tau near 1 means early (mostly masked) and
tau = 0 means fully decoded. A noise window [start, end] is therefore a
[high, low] pair and is traversed from start down to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

ANNEAL_KINDS = ("cosine", "linear")


@dataclass(frozen=True)
class NoiseWindow:
    """Diffusion-time interval [end, start] in which noise is injected.

    start > end because time decreases; both boundaries are closed. The
    low boundary is harmless to include since the scale anneals to 0 there.
    """

    start: float
    end: float

    def __post_init__(self) -> None:
        if not (0.0 < self.start <= 1.0):
            raise ValueError(f"window start must be in (0, 1], got {self.start}")
        if not (0.0 <= self.end < 1.0):
            raise ValueError(f"window end must be in [0, 1), got {self.end}")
        if self.start <= self.end:
            raise ValueError(
                f"window start must exceed end (time decreases), got [{self.start}, {self.end}]"
            )


@dataclass(frozen=True)
class AnnealSpec:
    """Decay shape and maximum scale of the injected noise."""

    kind: str = "cosine"
    sigma_max: float = 0.2

    def __post_init__(self) -> None:
        if self.kind not in ANNEAL_KINDS:
            raise ValueError(f"anneal kind must be one of {ANNEAL_KINDS}, got {self.kind!r}")
        if self.sigma_max < 0:
            raise ValueError(f"sigma_max must be >= 0, got {self.sigma_max}")


def diffusion_time(global_step: int, total_steps: int) -> float:
    """Diffusion time tau = 1 - g/S for global step g of S total steps.

    Decreases from just under 1 at the first step to exactly 0 at the last.
    """
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if not (1 <= global_step <= total_steps):
        raise ValueError(
            f"global_step must be in [1, {total_steps}], got {global_step}"
        )
    return 1.0 - global_step / total_steps


def in_window(tau: float, w: NoiseWindow) -> bool:
    """True iff tau lies inside the closed window [end, start]."""
    if not (0.0 <= tau <= 1.0):
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    return w.end <= tau <= w.start


def sigma_at(tau: float, w: NoiseWindow, a: AnnealSpec) -> float:
    """Noise scale at diffusion time tau inside the window.

    Progress p runs 0 -> 1 as tau falls from window start to window end;
    cosine decay gives sigma_max * (1 + cos(pi p)) / 2, linear decay gives
    sigma_max * (1 - p). Both hit sigma_max at the start and 0 at the end
    exactly. Callers must gate on in_window first.
    """
    if not in_window(tau, w):
        raise ValueError(f"tau={tau} is outside the window [{w.end}, {w.start}]")
    p = (w.start - tau) / (w.start - w.end)
    if p <= 0.0:
        return a.sigma_max
    if p >= 1.0:
        return 0.0
    if a.kind == "cosine":
        return a.sigma_max * 0.5 * (1.0 + math.cos(math.pi * p))
    return a.sigma_max * (1.0 - p)
