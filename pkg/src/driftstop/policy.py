from __future__ import annotations

from dataclasses import dataclass
from typing import Union


@dataclass(frozen=True)
class StopAtOnce:
    """tau = 0; no control is exerted."""


@dataclass(frozen=True)
class ConstantThreshold:
    """Constant control ``u`` until the first time |X| <= s."""

    u: float
    s: float

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"threshold must be positive, got {self.s}")


Policy = Union[StopAtOnce, ConstantThreshold]
