"""Reference adaptation policies for comparison runs.

QF (quality-first) and BF (buffer-first) are reconstructions from their
usual descriptions: QF greedily requests the highest ladder rung its
throughput estimate supports once past a startup threshold; BF scales the
estimate by the buffer's deviation from the reference before mapping to the
ladder.  Both are deliberately simple; they exist to generate comparative
trends, not to hit particular benchmark numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

__all__ = ["ThroughputEstimator", "qf_decide", "bf_decide"]


@dataclass
class ThroughputEstimator:
    """Exponentially weighted throughput tracker (Mbps).

    ``observe`` folds a new measurement in as
    ``ewma = w * sample + (1 - w) * ewma``; before the first measurement the
    estimate is None.
    """

    weight: float = 0.2
    last_measured: Optional[float] = None
    ewma: Optional[float] = None

    def __post_init__(self) -> None:
        if not 0.0 < self.weight <= 1.0:
            raise ValueError(f"weight must be in (0, 1], got {self.weight!r}")

    def observe(self, sample: float) -> None:
        if not (math.isfinite(sample) and sample > 0):
            raise ValueError(f"throughput sample must be > 0, got {sample!r}")
        self.last_measured = sample
        if self.ewma is None:
            self.ewma = sample
        else:
            self.ewma = self.weight * sample + (1.0 - self.weight) * self.ewma


def _floor_to_ladder(ladder: Sequence[float], target: float) -> float:
    """Highest rung <= target, or the lowest rung if target is below it."""
    if not ladder:
        raise ValueError("ladder must be nonempty")
    best = ladder[0]
    for rung in ladder:
        if rung <= target:
            best = rung
        else:
            break
    return best


def qf_decide(
    est: ThroughputEstimator,
    ladder: Sequence[float],
    b_curr: float,
    startup_threshold: float = 10.0,
) -> float:
    """Quality-first rung choice: aggressive and buffer-blind past startup."""
    if b_curr < startup_threshold or est.ewma is None:
        return ladder[0]
    return _floor_to_ladder(ladder, est.ewma)


def bf_decide(
    est: ThroughputEstimator,
    ladder: Sequence[float],
    b_curr: float,
    b_ref: float,
    gain: float = 0.5,
) -> float:
    """Buffer-first rung choice: throughput estimate scaled by buffer error.

    ``target = ewma * (1 + gain * (b_curr - b_ref) / b_ref)`` floor-mapped to
    the ladder; monotone nondecreasing in the current buffer.
    """
    if b_ref <= 0:
        raise ValueError(f"b_ref must be > 0, got {b_ref!r}")
    if est.ewma is None:
        return ladder[0]
    target = est.ewma * (1.0 + gain * (b_curr - b_ref) / b_ref)
    return _floor_to_ladder(ladder, target)
