"""MCS table, transport-block sizing, and the three link-adaptation controllers.

The controllers share one step interface: given the latest SNR estimate and
the feedback for the previous transmission, pick an MCS and return updated
state. The plain table lookup ignores feedback entirely; the outer-loop
controller biases the estimate by an offset driven by ACK/NACK; the soft-ACK
controller additionally reclassifies marginal ACKs as effective NACKs using
an estimated error probability against the threshold ``phi``.

Closed forms for the converged error rate of both feedback-driven controllers
(and the step-size conditions under which they hold) live here as well, so
simulations can be checked against them directly.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, replace
from enum import Enum

from .channel import SQRT2, db_to_linear

# Contraction of the offset recurrence fails once the combined step size
# reaches 2e/1.11 dB (the bound comes from the steepest admissible slope of a
# fitted error-rate curve).
STEP_SUM_LIMIT_DB = 2.0 * math.e / 1.11

# 4-bit CQI efficiency ladder in information bits per resource element.
_DEFAULT_EFFICIENCIES = (
    0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.9141,
    2.4063, 2.7305, 3.3223, 3.9023, 4.5234, 5.1152, 5.5547,
)
_DEFAULT_THRESHOLD_START_DB = -6.0
_DEFAULT_THRESHOLD_STEP_DB = 1.9


@dataclass(frozen=True)
class McsEntry:
    index: int
    snr_threshold_db: float
    efficiency_bits_per_re: float


class McsTable:
    """Ordered MCS entries; thresholds and efficiencies strictly increasing."""

    def __init__(self, entries: list[McsEntry] | tuple[McsEntry, ...],
                 res_per_rb_per_slot: int = 168):
        entries = tuple(entries)
        if not entries:
            raise ValueError("MCS table must not be empty")
        if res_per_rb_per_slot < 1:
            raise ValueError("res_per_rb_per_slot must be >= 1")
        for i, e in enumerate(entries):
            if e.index != i + 1:
                raise ValueError("MCS indices must be contiguous starting at 1")
        thr = [e.snr_threshold_db for e in entries]
        eff = [e.efficiency_bits_per_re for e in entries]
        if any(b <= a for a, b in zip(thr, thr[1:])):
            raise ValueError("MCS thresholds must be strictly increasing")
        if any(b <= a for a, b in zip(eff, eff[1:])):
            raise ValueError("MCS efficiencies must be strictly increasing")
        if eff[0] <= 0:
            raise ValueError("MCS efficiencies must be positive")
        self.entries = entries
        self.res_per_rb_per_slot = res_per_rb_per_slot
        self._thresholds = thr
        self._efficiencies = eff

    def __len__(self) -> int:
        return len(self.entries)

    def _check(self, mcs: int) -> int:
        if not 1 <= mcs <= len(self.entries):
            raise KeyError(f"unknown MCS index {mcs} (table has 1..{len(self.entries)})")
        return mcs

    def threshold(self, mcs: int) -> float:
        return self._thresholds[self._check(mcs) - 1]

    def efficiency(self, mcs: int) -> float:
        return self._efficiencies[self._check(mcs) - 1]

    @classmethod
    def default(cls) -> "McsTable":
        entries = [
            McsEntry(i + 1,
                     _DEFAULT_THRESHOLD_START_DB + _DEFAULT_THRESHOLD_STEP_DB * i,
                     eff)
            for i, eff in enumerate(_DEFAULT_EFFICIENCIES)
        ]
        return cls(entries)

    @classmethod
    def from_csv(cls, path: str, res_per_rb_per_slot: int = 168) -> "McsTable":
        """Load a table from CSV with header index,snr_threshold_db,efficiency_bits_per_re."""
        expected = ["index", "snr_threshold_db", "efficiency_bits_per_re"]
        entries = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
                raise ValueError(
                    f"MCS table CSV must have header {','.join(expected)}, "
                    f"got {reader.fieldnames}")
            for row in reader:
                entries.append(McsEntry(int(row["index"]),
                                        float(row["snr_threshold_db"]),
                                        float(row["efficiency_bits_per_re"])))
        entries.sort(key=lambda e: e.index)
        return cls(entries, res_per_rb_per_slot=res_per_rb_per_slot)


class EesmConvention(str, Enum):
    AS_WRITTEN = "as_written"      # beta * ln(mean(exp(+g/beta)))
    CONVENTIONAL = "conventional"  # -beta * ln(mean(exp(-g/beta)))


def eesm(per_re_snrs_linear, beta: float,
         convention: EesmConvention = EesmConvention.CONVENTIONAL) -> float:
    """Exponential effective SNR mapping over per-resource linear SNRs, in dB.

    The conventional form is a soft minimum (never above the arithmetic
    mean); the as-written form flips both signs and is a soft maximum.
    """
    values = list(per_re_snrs_linear)
    if not values:
        raise ValueError("eesm requires a nonempty SNR list")
    if beta <= 0:
        raise ValueError("eesm requires beta > 0")
    if any(v <= 0 for v in values):
        raise ValueError("eesm requires positive linear SNRs")
    sign = 1.0 if convention is EesmConvention.AS_WRITTEN else -1.0
    # log-mean-exp with the max factored out for numerical stability
    scaled = [sign * v / beta for v in values]
    m = max(scaled)
    acc = sum(math.exp(x - m) for x in scaled)
    effective = sign * beta * (m + math.log(acc / len(scaled)))
    return 10.0 * math.log10(effective)


def mcs_lookup(snr_db: float, table: McsTable) -> int:
    """Largest MCS whose threshold is <= snr_db, clamped to the table ends."""
    i = bisect.bisect_right(table._thresholds, snr_db) - 1
    if i < 0:
        return 1
    return min(i + 1, len(table))


def tb_size(mcs: int, n_rbs: int, table: McsTable) -> int:
    """Transport-block size in bits: floor(efficiency * REs per RB * RBs)."""
    if n_rbs < 0:
        raise ValueError("n_rbs must be >= 0")
    return int(table.efficiency(mcs) * table.res_per_rb_per_slot * n_rbs)


def shannon_bound(n_rbs: int, snr_db: float) -> float:
    """Capacity ceiling e*log2(1 + snr_linear/e) for an e-RB allocation.

    The result is in bits per resource element; multiply by
    ``res_per_rb_per_slot`` for a per-slot bit ceiling. Feeding the aggregate
    SNR over the allocation makes this the standard equal-split bound.
    """
    if n_rbs < 1:
        raise ValueError("n_rbs must be >= 1")
    return n_rbs * math.log2(1.0 + db_to_linear(snr_db) / n_rbs)


class LinkMode(str, Enum):
    LOOKUP_3GPP = "3gpp"
    OLLA = "olla"
    SOFT_ACK = "soft_ack"


class HarqFeedback(str, Enum):
    ACK = "ack"
    NACK = "nack"
    HIGH_MARGIN_ACK = "high_margin_ack"
    LOW_MARGIN_ACK = "low_margin_ack"


@dataclass(frozen=True)
class LinkAdaptState:
    """Value-semantic controller state; step functions return new instances.

    ``classifier_alpha_db`` shifts the estimated-error curve used to grade
    ACKs. Negative values make the classifier pessimistic, so ACKs sent with
    little margin above the operating point get reclassified as low-margin;
    at 0 the low-margin band sits far below any offset the controller reaches
    and soft-ACK degenerates to the plain outer loop.
    """

    mode: LinkMode = LinkMode.SOFT_ACK
    offset_db: float = 0.0
    delta_up_db: float = 0.4
    delta_down_db: float = 0.4 / 9.0
    phi: float = 0.92
    offset_min_db: float = -3.0
    offset_max_db: float = 3.0
    classifier_alpha_db: float = -3.5
    last_feedback: HarqFeedback | None = None

    def validate(self) -> None:
        if self.delta_up_db <= 0 or self.delta_down_db <= 0:
            raise ValueError("step sizes must be positive")
        if not 0.0 < self.phi < 1.0:
            raise ValueError("phi must be in (0, 1)")
        if self.offset_min_db > self.offset_max_db:
            raise ValueError("offset bounds inverted")
        if not self.offset_min_db <= self.offset_db <= self.offset_max_db:
            raise ValueError("offset_db outside its bounds")


def olla_update(state: LinkAdaptState, feedback: HarqFeedback) -> LinkAdaptState:
    """Advance the SNR offset one step from a feedback event.

    NACK and low-margin ACK raise the offset by delta_up; ACK and high-margin
    ACK lower it by delta_down. The result is clamped to the deviation bounds.
    """
    if feedback in (HarqFeedback.NACK, HarqFeedback.LOW_MARGIN_ACK):
        offset = state.offset_db + state.delta_up_db
    else:
        offset = state.offset_db - state.delta_down_db
    offset = min(max(offset, state.offset_min_db), state.offset_max_db)
    return replace(state, offset_db=offset, last_feedback=feedback)


def estimate_bler(snr_db: float, mcs: int, table: McsTable,
                  alpha_db: float = 0.0) -> float:
    """Closed-form error-probability estimate from SNR margin over the MCS threshold."""
    margin = snr_db - table.threshold(mcs)
    return 0.5 * math.erfc((margin + alpha_db) / SQRT2)


def classify_ack(bler_estimate: float, phi: float) -> HarqFeedback:
    """Grade an ACK: high margin iff the estimated error probability is <= phi."""
    if bler_estimate <= phi:
        return HarqFeedback.HIGH_MARGIN_ACK
    return HarqFeedback.LOW_MARGIN_ACK


def link_adapt_step(state: LinkAdaptState, snr_estimate_db: float,
                    prev_feedback: HarqFeedback | None,
                    table: McsTable) -> tuple[int, LinkAdaptState]:
    """One controller step: choose the MCS for this slot and update state.

    The MCS is chosen from the estimate minus the incoming offset (the plain
    lookup mode ignores the offset). The previous slot's feedback is then
    folded into the offset carried forward: in soft-ACK mode a raw ACK is
    first graded against ``phi`` using the unadjusted SNR estimate, so the
    classifier margin widens as the offset grows.
    """
    if state.mode is LinkMode.LOOKUP_3GPP:
        return mcs_lookup(snr_estimate_db, table), state
    mcs = mcs_lookup(snr_estimate_db - state.offset_db, table)
    if prev_feedback is None:
        return mcs, state
    feedback = prev_feedback
    if state.mode is LinkMode.SOFT_ACK and feedback is HarqFeedback.ACK:
        eta_hat = estimate_bler(snr_estimate_db, mcs, table,
                                state.classifier_alpha_db)
        feedback = classify_ack(eta_hat, state.phi)
    return mcs, olla_update(state, feedback)


def olla_fixed_point(delta_up: float, delta_down: float) -> float:
    """Converged error rate of the outer loop: 1 / (1 + delta_up/delta_down)."""
    if delta_up <= 0 or delta_down <= 0:
        raise ValueError("step sizes must be positive")
    return 1.0 / (1.0 + delta_up / delta_down)


def soft_fixed_point(delta_up: float, delta_down: float, eta_phi: float) -> float:
    """Converged error rate under soft-ACK at high-margin proportion eta_phi.

    Equals the plain outer-loop fixed point at eta_phi = 1 and drops below it
    as soon as any ACKs are graded low-margin.
    """
    if delta_up <= 0 or delta_down <= 0:
        raise ValueError("step sizes must be positive")
    if not 0.0 < eta_phi <= 1.0:
        raise ValueError("eta_phi must be in (0, 1]")
    ratio = delta_up / delta_down
    return ((1.0 - 1.0 / eta_phi) * ratio + 1.0) / (1.0 + ratio)


@dataclass(frozen=True)
class ConvergenceConditions:
    """Step-size (and ACK-proportion) checks behind the two fixed points."""

    olla_step_sum_ok: bool
    soft_step_ok: bool
    soft_eta_ok: bool | None
    step_sum_db: float
    step_limit_db: float
    eta_phi_lower_bound: float


def check_convergence_conditions(delta_up: float, delta_down: float,
                                 eta_phi: float | None = None) -> ConvergenceConditions:
    if delta_up <= 0 or delta_down <= 0:
        raise ValueError("step sizes must be positive")
    lower = 1.0 / (1.0 + delta_down / delta_up)
    return ConvergenceConditions(
        olla_step_sum_ok=(delta_up + delta_down) < STEP_SUM_LIMIT_DB,
        soft_step_ok=delta_up < STEP_SUM_LIMIT_DB,
        soft_eta_ok=None if eta_phi is None else eta_phi >= lower,
        step_sum_db=delta_up + delta_down,
        step_limit_db=STEP_SUM_LIMIT_DB,
        eta_phi_lower_bound=lower,
    )
