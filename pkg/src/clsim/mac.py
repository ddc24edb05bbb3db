"""Per-TTI resource-block allocation.

Two policies: a full-grid baseline that always spends every available RB,
and a video-aware allocator that sizes each transport block to the bitrate
of the chunk being delivered. The video-aware target is the per-slot bit
budget that, after discounting the expected error rate, drains one chunk in
exactly one chunk duration; the allocator then picks the RB count whose
transport block lands closest to that target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .phy import McsTable, tb_size


class RaPolicy(str, Enum):
    FULL_GRID = "full_grid"
    VRA = "vra"


@dataclass(frozen=True)
class MacConfig:
    e_max: int = 52
    slots_per_tti: int = 1
    policy: RaPolicy = RaPolicy.VRA

    def validate(self) -> None:
        if self.e_max < 1:
            raise ValueError("e_max must be >= 1")
        if self.slots_per_tti < 1:
            raise ValueError("slots_per_tti must be >= 1")


@dataclass(frozen=True)
class VraTarget:
    """One TTI's allocation target for the video-aware policy."""

    chunk_size_bits: float
    chunk_duration_s: float
    bler_estimate: float
    target_tb_bits: float

    def validate(self) -> None:
        if self.chunk_size_bits <= 0 or self.chunk_duration_s <= 0:
            raise ValueError("chunk size and duration must be positive")
        if not 0.0 <= self.bler_estimate < 1.0:
            raise ValueError("bler_estimate must be in [0, 1)")
        if self.target_tb_bits <= 0:
            raise ValueError("target_tb_bits must be positive")


def target_tb_size(chunk_size_bits: float, bler_estimate: float,
                   chunk_duration_s: float, slot_duration_s: float) -> float:
    """Per-slot transport-block size that matches the chunk bitrate.

    chunk_size_bits * slot_duration / ((1 - bler) * chunk_duration). The
    slot-duration factor converts the error-discounted bits-per-second
    budget into bits per slot.
    """
    if not 0.0 <= bler_estimate < 1.0:
        raise ValueError(f"bler_estimate must be in [0, 1), got {bler_estimate}")
    if chunk_duration_s <= 0 or slot_duration_s <= 0:
        raise ValueError("durations must be positive")
    if chunk_size_bits < 0:
        raise ValueError("chunk_size_bits must be >= 0")
    return chunk_size_bits * slot_duration_s / ((1.0 - bler_estimate) * chunk_duration_s)


def vra_allocate(target_tb_bits: float, mcs: int, table: McsTable,
                 e_max: int) -> int:
    """RB count in {0..e_max} whose TB size is closest to the target.

    Ties break toward the smaller count. The TB size is monotone in the RB
    count, so only the neighbors of the real-valued solution need checking.
    """
    if target_tb_bits < 0:
        raise ValueError("target_tb_bits must be >= 0")
    if e_max < 0:
        raise ValueError("e_max must be >= 0")
    per_rb = table.efficiency(mcs) * table.res_per_rb_per_slot
    guess = int(target_tb_bits / per_rb)
    lo = min(max(guess - 1, 0), e_max)
    hi = min(guess + 2, e_max)
    best_e = lo
    best_gap = math.inf
    for e in range(lo, hi + 1):
        gap = abs(tb_size(mcs, e, table) - target_tb_bits)
        if gap < best_gap:
            best_gap = gap
            best_e = e
    return best_e


def full_grid_allocate(e_max: int) -> int:
    """Baseline policy: always the whole grid."""
    return e_max


def multi_user_scale(base_proportions, vra_ratios) -> list[float]:
    """Blend a multi-user share with per-user video-aware ratios.

    Elementwise product, renormalized to sum to 1. If every product is zero
    the split falls back to uniform.
    """
    base = list(base_proportions)
    ratios = list(vra_ratios)
    if len(base) != len(ratios):
        raise ValueError("base proportions and ratios must have equal length")
    if not base:
        raise ValueError("need at least one user")
    product = [b * r for b, r in zip(base, ratios)]
    total = sum(product)
    if total == 0.0:
        return [1.0 / len(base)] * len(base)
    return [p / total for p in product]
