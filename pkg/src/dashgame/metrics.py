"""Post-hoc evaluation of session traces.

Two composite QoE objectives plus per-trace summary statistics.  Both QoE
scores are sums over the M downloaded segments:

    qoe1 = sum r[k] - xi * sum |r[k+1]-r[k]|
           - psi * sum max(0, T_down[k] - b[k])

    qoe2 = sum q[k] - phi * sum |q[k+1]-q[k]|
           - sigma * sum_{k<M} (max(0, b_ref - b[k+1]))^2
           - eta * sum max(0, T_down[k] - b[k])

where ``b[k]`` in the stall terms is the buffer at the *start* of segment
k's download (the quantity the download time races against) and ``b[k+1]``
in the shortfall term is the buffer at segment completion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .netsim import SessionTrace

__all__ = ["QoeMetricParams", "SummaryStats", "qoe1", "qoe2", "summarize"]


@dataclass(frozen=True)
class QoeMetricParams:
    """Weights of the two QoE objectives; defaults are the standard ones."""

    xi: float = 1.0
    psi: float = 6.0
    phi: float = 2.0
    sigma: float = 0.001
    eta: float = 2.0
    b_ref: float = 15.0

    def __post_init__(self) -> None:
        for name in ("xi", "psi", "phi", "sigma", "eta"):
            if getattr(self, name) < 0:
                raise ValueError(f"QoeMetricParams.{name} must be >= 0")


@dataclass
class SummaryStats:
    """Per-trace aggregates in the style of the comparison tables."""

    avg_rate: float
    rate_stddev: float
    switch_count: int
    avg_switch_amplitude: float
    avg_quality: float
    quality_stddev: float
    stall_count: int
    stall_total: float
    avg_buffer: float

    def to_dict(self) -> dict:
        return {
            "avg_rate": self.avg_rate,
            "rate_stddev": self.rate_stddev,
            "switch_count": self.switch_count,
            "avg_switch_amplitude": self.avg_switch_amplitude,
            "avg_quality": self.avg_quality,
            "quality_stddev": self.quality_stddev,
            "stall_count": self.stall_count,
            "stall_total": self.stall_total,
            "avg_buffer": self.avg_buffer,
        }


def _require_records(trace: SessionTrace) -> None:
    if not trace.records:
        raise ValueError("trace has no records")


def _start_buffers(trace: SessionTrace) -> list[float]:
    starts = [trace.initial_buffer]
    starts.extend(rec.buffer for rec in trace.records[:-1])
    return starts


def _stall_penalty(trace: SessionTrace) -> float:
    return sum(
        max(0.0, rec.download_time - b)
        for rec, b in zip(trace.records, _start_buffers(trace))
    )


def qoe1(trace: SessionTrace, params: QoeMetricParams) -> float:
    """Rate-based QoE: total bitrate minus switching and rebuffering penalties."""
    _require_records(trace)
    rates = [rec.quantized_rate for rec in trace.records]
    switches = sum(abs(b - a) for a, b in zip(rates, rates[1:]))
    return sum(rates) - params.xi * switches - params.psi * _stall_penalty(trace)


def qoe2(trace: SessionTrace, params: QoeMetricParams) -> float:
    """Quality-based QoE with a quadratic reference-buffer shortfall term."""
    _require_records(trace)
    qs = [rec.quality for rec in trace.records]
    switches = sum(abs(b - a) for a, b in zip(qs, qs[1:]))
    shortfall = sum(
        max(0.0, params.b_ref - rec.buffer) ** 2 for rec in trace.records[1:]
    )
    return (
        sum(qs)
        - params.phi * switches
        - params.sigma * shortfall
        - params.eta * _stall_penalty(trace)
    )


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def summarize(
    trace: SessionTrace,
    switch_threshold: float = 0.05,
    quantized: Optional[bool] = None,
) -> SummaryStats:
    """Summary statistics over one trace.

    Switches are counted as rung changes when the trace is quantized, and as
    consecutive rate jumps above ``switch_threshold`` Mbps otherwise (a
    continuous trace never repeats exactly).  ``quantized`` defaults to the
    mode recorded on the trace.
    """
    _require_records(trace)
    if quantized is None:
        quantized = trace.quantized
    rates = [rec.quantized_rate for rec in trace.records]
    avg_rate, rate_std = _mean_std(rates)
    amplitudes = []
    for a, b in zip(rates, rates[1:]):
        delta = abs(b - a)
        if (quantized and b != a) or (not quantized and delta > switch_threshold):
            amplitudes.append(delta)
    qs = [rec.quality for rec in trace.records]
    avg_q, q_std = _mean_std(qs)
    stalls = [rec.stall_seconds for rec in trace.records if rec.stall_seconds > 0]
    buffers = [rec.buffer for rec in trace.records]
    return SummaryStats(
        avg_rate=avg_rate,
        rate_stddev=rate_std,
        switch_count=len(amplitudes),
        avg_switch_amplitude=(sum(amplitudes) / len(amplitudes)) if amplitudes else 0.0,
        avg_quality=avg_q,
        quality_stddev=q_std,
        stall_count=len(stalls),
        stall_total=sum(stalls),
        avg_buffer=sum(buffers) / len(buffers),
    )
