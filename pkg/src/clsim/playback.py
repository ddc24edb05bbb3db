"""Playback-side bookkeeping: throughput, rebuffering, buffer, utilization.

The player requests the next chunk the instant the current one finishes, so
chunk start times satisfy t[i+1] = t[i] + d[i] and the rate-utilization
metric d[i] / chunk_duration reads 1.0 when delivery exactly paces playback,
above 1 when the link underruns the bitrate and below 1 when it overshoots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import fmean, pvariance

from .abr import qoe_chunk

CHUNK_CSV_HEADER = ("i,level,bitrate_kbps,start_s,download_s,rebuffer_s,"
                    "throughput_bps,utilization,residual_errors")


@dataclass(frozen=True)
class ChunkRecord:
    index: int
    level: int
    bitrate_kbps: float
    size_bits: float
    start_s: float
    download_s: float
    rebuffer_s: float
    throughput_bps: float
    utilization: float
    residual_block_errors: int

    def csv_row(self) -> str:
        return (f"{self.index},{self.level},{self.bitrate_kbps!r},{self.start_s!r},"
                f"{self.download_s!r},{self.rebuffer_s!r},{self.throughput_bps!r},"
                f"{self.utilization!r},{self.residual_block_errors}")


def chunk_throughput(slot_records, slot_duration_s: float) -> float:
    """Mean instantaneous delivered rate over a download window, bits/s."""
    total = 0.0
    count = 0
    for rec in slot_records:
        if not rec.error:
            total += rec.tb_bits
        count += 1
    if count == 0:
        raise ValueError("chunk_throughput needs a nonempty slot window")
    return total / (count * slot_duration_s)


def rebuffer_time(download_s: float, buffer_s: float) -> float:
    """Stall time for one chunk: positive part of download minus buffer."""
    if download_s < 0 or buffer_s < 0:
        raise ValueError("download and buffer times must be >= 0")
    return max(download_s - buffer_s, 0.0)


def advance_buffer(buffer_s: float, download_s: float, chunk_duration_s: float,
                   buffer_max_s: float) -> float:
    """Buffer occupancy after one download: drained, refilled, clamped to [0, max]."""
    b = max(buffer_s - download_s, 0.0) + chunk_duration_s
    return min(max(b, 0.0), buffer_max_s)


def rate_utilization(start_s: float, next_start_s: float,
                     chunk_duration_s: float) -> float:
    if next_start_s <= start_s:
        raise ValueError("chunk start times must be strictly increasing")
    return (next_start_s - start_s) / chunk_duration_s


@dataclass
class SessionReport:
    """Aggregated outcome of one delivery session."""

    chunks: list[ChunkRecord]
    mean_bitrate_kbps: float
    mean_rebuffer_s: float
    total_rebuffer_s: float
    total_qoe: float
    mean_qoe: float
    mean_utilization: float
    var_utilization: float
    mean_throughput_bps: float
    residual_block_errors: int
    empirical_bler: float = math.nan
    slot_count: int = 0
    measured_eta_phi: float | None = None
    seed: int = 0
    config: dict = field(default_factory=dict)
    slots: list = field(default_factory=list, repr=False)  # engine SlotRecords when collected

    def summary_dict(self) -> dict:
        return {
            "chunk_count": len(self.chunks),
            "mean_bitrate_kbps": self.mean_bitrate_kbps,
            "mean_bitrate_mbps": self.mean_bitrate_kbps / 1000.0,
            "mean_rebuffer_s": self.mean_rebuffer_s,
            "total_rebuffer_s": self.total_rebuffer_s,
            "total_qoe": self.total_qoe,
            "mean_qoe": self.mean_qoe,
            "mean_utilization": self.mean_utilization,
            "var_utilization": self.var_utilization,
            "mean_throughput_bps": self.mean_throughput_bps,
            "empirical_bler": self.empirical_bler,
            "residual_block_errors": self.residual_block_errors,
            "slot_count": self.slot_count,
            "measured_eta_phi": self.measured_eta_phi,
            "seed": self.seed,
        }


def aggregate(records: list[ChunkRecord], qoe_alpha: float,
              qoe_beta: float) -> SessionReport:
    """Fold per-chunk records into session statistics.

    Total score sums per-chunk quality with the switching penalty taken
    against the previous record; the first chunk is its own predecessor, so
    it carries no switching penalty. Every aggregate is recomputable from
    ``chunks`` alone.
    """
    if not records:
        raise ValueError("aggregate needs at least one chunk record")
    total_qoe = 0.0
    prev_kbps = records[0].bitrate_kbps
    for rec in records:
        total_qoe += qoe_chunk(rec.bitrate_kbps, prev_kbps, rec.rebuffer_s,
                               qoe_alpha, qoe_beta)
        prev_kbps = rec.bitrate_kbps
    utils = [r.utilization for r in records]
    return SessionReport(
        chunks=records,
        mean_bitrate_kbps=fmean(r.bitrate_kbps for r in records),
        mean_rebuffer_s=fmean(r.rebuffer_s for r in records),
        total_rebuffer_s=sum(r.rebuffer_s for r in records),
        total_qoe=total_qoe,
        mean_qoe=total_qoe / len(records),
        mean_utilization=fmean(utils),
        var_utilization=pvariance(utils),
        mean_throughput_bps=fmean(r.throughput_bps for r in records),
        residual_block_errors=sum(r.residual_block_errors for r in records),
    )
