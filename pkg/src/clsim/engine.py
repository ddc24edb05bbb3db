"""Closed-loop session driver.

One session wires the three control layers at their native cadences: the SNR
offset moves every slot from HARQ feedback, the RB allocation is recomputed
every TTI against the target derived from the active chunk's bitrate, and
the bitrate itself changes only at chunk boundaries from the capacity
history measured at the link. Feedback for a transmission is consumed on the
following slot.

Capacity samples fed to the bitrate controller measure what the link could
carry on the full grid at the slot's chosen MCS (with the slot's actual
decode outcome), not what the allocator chose to send; otherwise a
bitrate-matched allocation would cap its own measurements and lock the
controller at the bottom of the ladder. Slot records carry both numbers.

Everything is deterministic in the session seed: the SNR process, estimation
noise, and block-error draws consume three independent child streams.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .abr import (BitrateLadder, CapacityHistory, MpcConfig, PlayerState,
                  buffer_based_select, hybrid_select, mpc_select,
                  rate_based_select)
from .channel import (BlerModel, ChannelKind, ChannelModel, SnrProcess,
                      true_bler)
from .mac import MacConfig, RaPolicy, full_grid_allocate, target_tb_size, vra_allocate
from .phy import (HarqFeedback, LinkAdaptState, LinkMode, McsTable,
                  check_convergence_conditions, estimate_bler,
                  link_adapt_step, olla_fixed_point, soft_fixed_point,
                  tb_size)
from .playback import (ChunkRecord, SessionReport, advance_buffer, aggregate,
                       rate_utilization, rebuffer_time)

_RNG_BLOCK = 8192

# Cap on the error estimate entering the allocation target; at the cap the
# target saturates the grid instead of diverging.
MAX_VRA_BLER_ESTIMATE = 0.95


class EngineError(RuntimeError):
    pass


class AbrKind(str, Enum):
    MPC = "mpc"
    RATE = "rate"
    BUFFER = "buffer"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class CsiConfig:
    estimation_noise_sigma_db: float = 1.0
    report_delay_slots: int = 4

    def validate(self) -> None:
        if self.estimation_noise_sigma_db < 0:
            raise ValueError("estimation_noise_sigma_db must be >= 0")
        if self.report_delay_slots < 0:
            raise ValueError("report_delay_slots must be >= 0")


@dataclass(frozen=True)
class LinkConfig:
    """Link-adaptation knobs; delta_down defaults to the value that puts the
    outer-loop fixed point at ``target_bler``."""

    mode: LinkMode = LinkMode.SOFT_ACK
    delta_up_db: float = 0.4
    target_bler: float = 0.1
    delta_down_db: float | None = None
    phi: float = 0.92
    offset_min_db: float = -3.0
    offset_max_db: float = 3.0
    classifier_alpha_db: float = -3.5

    def resolved_delta_down(self) -> float:
        if self.delta_down_db is not None:
            return self.delta_down_db
        if not 0.0 < self.target_bler < 1.0:
            raise ValueError("target_bler must be in (0, 1)")
        # invert the fixed point 1/(1 + up/down) = target
        return self.delta_up_db * self.target_bler / (1.0 - self.target_bler)

    def initial_state(self) -> LinkAdaptState:
        state = LinkAdaptState(
            mode=self.mode,
            offset_db=0.0,
            delta_up_db=self.delta_up_db,
            delta_down_db=self.resolved_delta_down(),
            phi=self.phi,
            offset_min_db=self.offset_min_db,
            offset_max_db=self.offset_max_db,
            classifier_alpha_db=self.classifier_alpha_db,
        )
        state.validate()
        return state


@dataclass(frozen=True)
class AbrConfig:
    kind: AbrKind = AbrKind.MPC
    mpc: MpcConfig = MpcConfig()
    reservoir_s: float = 5.0
    cushion_s: float = 10.0
    safety: float = 0.9

    def validate(self) -> None:
        self.mpc.validate()
        if self.reservoir_s < 0 or self.cushion_s <= 0:
            raise ValueError("invalid buffer-based thresholds")
        if not 0.0 < self.safety <= 1.0:
            raise ValueError("safety must be in (0, 1]")


@dataclass(frozen=True)
class PredictionConfig:
    interval_s: float = 0.6
    window_n: int = 8

    def validate(self, slot_duration_s: float) -> None:
        if self.window_n < 1:
            raise ValueError("window_n must be >= 1")
        ratio = self.interval_s / slot_duration_s
        if self.interval_s <= 0 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("prediction interval must be a whole number of slots")


@dataclass(frozen=True)
class VideoConfig:
    ladder_kbps: tuple[float, ...] = (750.0, 1750.0, 2350.0, 3000.0, 4300.0, 7000.0)
    chunk_duration_s: float = 2.0
    num_chunks: int = 30
    buffer_max_s: float = 60.0

    def ladder(self) -> BitrateLadder:
        return BitrateLadder(self.ladder_kbps, self.chunk_duration_s)

    def validate(self) -> None:
        self.ladder()
        if self.num_chunks < 1:
            raise ValueError("num_chunks must be >= 1")
        if self.buffer_max_s < self.chunk_duration_s:
            raise ValueError("buffer_max_s must hold at least one chunk")


@dataclass(frozen=True)
class SessionConfig:
    channel: ChannelModel = ChannelModel()
    bler: BlerModel = BlerModel()
    csi: CsiConfig = CsiConfig()
    link: LinkConfig = LinkConfig()
    mac: MacConfig = MacConfig()
    abr: AbrConfig = AbrConfig()
    prediction: PredictionConfig = PredictionConfig()
    video: VideoConfig = VideoConfig()
    mcs_table_path: str | None = None
    # Negative values bias the allocation-target error estimate upward, so
    # delivery runs a few percent above the chunk bitrate and the playback
    # buffer accretes a cushion instead of staying pinned at one chunk.
    vra_bler_alpha_db: float = -1.5
    vra_remaining_aware: bool = False
    harq_max_retransmissions: int = 3
    max_slots_per_chunk: int = 200_000
    slot_duration_s: float = 0.001
    seed: int = 1

    def build_table(self) -> McsTable:
        if self.mcs_table_path:
            return McsTable.from_csv(self.mcs_table_path)
        return McsTable.default()

    def validate(self) -> None:
        if self.slot_duration_s <= 0:
            raise ValueError("slot_duration_s must be positive")
        self.channel.validate(self.slot_duration_s)
        self.bler.validate()
        self.csi.validate()
        self.link.initial_state()
        self.mac.validate()
        self.abr.validate()
        self.prediction.validate(self.slot_duration_s)
        self.video.validate()
        self.build_table()
        if self.harq_max_retransmissions < 0:
            raise ValueError("harq_max_retransmissions must be >= 0")
        if self.max_slots_per_chunk < 1:
            raise ValueError("max_slots_per_chunk must be >= 1")
        if not math.isfinite(self.vra_bler_alpha_db):
            raise ValueError("vra_bler_alpha_db must be finite")

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(obj):
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


@dataclass(slots=True)
class SlotRecord:
    slot: int
    true_snr_db: float
    est_snr_db: float
    offset_db: float
    mcs: int
    n_rbs: int
    tb_bits: int
    error: bool
    feedback: str
    harq_attempt: int
    potential_bits: int

    @property
    def delivered_bits(self) -> int:
        return 0 if self.error else self.tb_bits


SLOT_CSV_HEADER = ("t,true_snr_db,est_snr_db,offset_db,mcs,n_rbs,tb_bits,"
                   "error,feedback,harq_attempt,potential_bits")


class _Streams:
    """Three independent child generators plus block-buffered scalar draws."""

    def __init__(self, seed: int):
        children = np.random.SeedSequence(seed).spawn(3)
        self.trace_rng = np.random.default_rng(children[0])
        self._noise_rng = np.random.default_rng(children[1])
        self._err_rng = np.random.default_rng(children[2])
        self._noise = np.empty(0)
        self._noise_pos = 0
        self._unif = np.empty(0)
        self._unif_pos = 0

    def noise(self) -> float:
        if self._noise_pos >= self._noise.size:
            self._noise = self._noise_rng.standard_normal(_RNG_BLOCK)
            self._noise_pos = 0
        v = self._noise[self._noise_pos]
        self._noise_pos += 1
        return float(v)

    def unif(self) -> float:
        if self._unif_pos >= self._unif.size:
            self._unif = self._err_rng.random(_RNG_BLOCK)
            self._unif_pos = 0
        v = self._unif[self._unif_pos]
        self._unif_pos += 1
        return float(v)


class _TraceBuffer:
    """Grow-on-demand view of the ground-truth SNR process."""

    def __init__(self, proc: SnrProcess):
        self._proc = proc
        self._buf = np.empty(0)

    def get(self, slot: int) -> float:
        while slot >= self._buf.size:
            self._buf = np.concatenate([self._buf, self._proc.take(_RNG_BLOCK)])
        return float(self._buf[slot])


def run_session(config: SessionConfig, collect_slots: bool = False) -> SessionReport:
    """Run one full delivery session and aggregate it into a report.

    Per chunk: the selector picks a level from the capacity history, then
    slots advance until the delivered bits cover the chunk size. Each slot
    estimates the SNR, steps the link adaptor, sizes the transport block for
    the TTI's allocation, and draws the decode outcome against the
    ground-truth error probability. Failed blocks retransmit on following
    slots (re-fit to the same size target at the current MCS) up to the HARQ
    cap, then count as residual errors and re-enter the queue.
    """
    config.validate()
    table = config.build_table()
    ladder = config.video.ladder()
    dt = config.slot_duration_s
    t_chunk = config.video.chunk_duration_s
    b_max = config.video.buffer_max_s
    e_max = config.mac.e_max
    m_tti = config.mac.slots_per_tti
    delay = config.csi.report_delay_slots
    sigma = config.csi.estimation_noise_sigma_db
    max_retx = config.harq_max_retransmissions
    interval_slots = round(config.prediction.interval_s / dt)

    streams = _Streams(config.seed)
    trace = _TraceBuffer(SnrProcess(config.channel, dt, streams.trace_rng))

    state = config.link.initial_state()
    prev_fb: HarqFeedback | None = None
    soft_high = 0
    soft_acks = 0

    samples: list[float] = []
    bucket = 0.0
    bucket_n = 0

    slots: list[SlotRecord] = []
    chunks: list[ChunkRecord] = []

    t = 0
    clock = 0.0
    buffer_s = 0.0
    last_level = 0
    e_current = e_max
    errors = 0
    attempts = 0

    for i in range(config.video.num_chunks):
        level = _select_level(config, i, samples, buffer_s, b_max, last_level,
                              clock, ladder)
        size = ladder.chunk_size_bits(level)
        start_clock = clock
        buffer_at_request = buffer_s

        # Hold off while the buffer lacks headroom for one more chunk; the
        # wait counts into this chunk's download time.
        while buffer_s > b_max - t_chunk + 1e-12:
            buffer_s = max(buffer_s - dt, 0.0)
            clock += dt
            t += 1

        delivered = 0.0
        chain_attempt = 0
        chain_target: float | None = None
        residual = 0
        slots_used = 0

        while delivered < size:
            if slots_used >= config.max_slots_per_chunk:
                raise EngineError(
                    f"chunk {i} not deliverable within {config.max_slots_per_chunk} "
                    f"slots; channel starved at level {level}")
            true_snr = trace.get(t)
            est = trace.get(max(0, t - delay))
            if sigma > 0:
                est += streams.noise() * sigma
            mcs, state = link_adapt_step(state, est, prev_fb, table)

            if t % m_tti == 0:
                if config.mac.policy is RaPolicy.FULL_GRID:
                    e_current = full_grid_allocate(e_max)
                else:
                    if chain_target is not None:
                        target = chain_target
                    else:
                        eta_hat = min(estimate_bler(est, mcs, table,
                                                    config.vra_bler_alpha_db),
                                      MAX_VRA_BLER_ESTIMATE)
                        if config.vra_remaining_aware:
                            remaining_bits = max(size - delivered, 1.0)
                            remaining_s = max(t_chunk - slots_used * dt, dt)
                            target = target_tb_size(remaining_bits, eta_hat,
                                                    remaining_s, dt)
                        else:
                            target = target_tb_size(size, eta_hat, t_chunk, dt)
                    e_current = vra_allocate(target, mcs, table, e_max)

            n_bits = tb_size(mcs, e_current, table)
            if n_bits > 0:
                p_err = true_bler(true_snr, mcs, table, config.bler)
                err = streams.unif() < p_err
                attempts += 1
                if err:
                    errors += 1
                    chain_attempt += 1
                    if chain_target is None:
                        chain_target = float(n_bits)
                    if chain_attempt > max_retx:
                        residual += 1
                        chain_attempt = 0
                        chain_target = None
                else:
                    delivered += n_bits
                    chain_attempt = 0
                    chain_target = None
                raw_fb = HarqFeedback.NACK if err else HarqFeedback.ACK
                potential = n_bits if e_current == e_max else tb_size(mcs, e_max, table)
                bucket += 0 if err else potential
                bucket_n += 1
                if bucket_n == interval_slots:
                    samples.append(bucket / config.prediction.interval_s)
                    bucket = 0.0
                    bucket_n = 0
            else:
                err = False
                raw_fb = None
                potential = 0

            if state.mode is LinkMode.SOFT_ACK and prev_fb is HarqFeedback.ACK:
                soft_acks += 1
                if state.last_feedback is HarqFeedback.HIGH_MARGIN_ACK:
                    soft_high += 1
            prev_fb = raw_fb

            if collect_slots:
                slots.append(SlotRecord(
                    slot=t, true_snr_db=true_snr, est_snr_db=est,
                    offset_db=state.offset_db, mcs=mcs, n_rbs=e_current,
                    tb_bits=n_bits, error=bool(err),
                    feedback=raw_fb.value if raw_fb else "idle",
                    harq_attempt=chain_attempt, potential_bits=potential))

            t += 1
            clock += dt
            slots_used += 1

        download_s = clock - start_clock
        rebuffer = rebuffer_time(download_s, buffer_at_request)
        throughput = delivered / download_s
        util = rate_utilization(start_clock, clock, t_chunk)
        buffer_s = advance_buffer(buffer_at_request, download_s, t_chunk, b_max)
        chunks.append(ChunkRecord(
            index=i, level=level, bitrate_kbps=ladder.levels_kbps[level],
            size_bits=size, start_s=start_clock, download_s=download_s,
            rebuffer_s=rebuffer, throughput_bps=throughput, utilization=util,
            residual_block_errors=residual))
        last_level = level

    report = aggregate(chunks, config.abr.mpc.qoe_alpha, config.abr.mpc.qoe_beta)
    report.empirical_bler = errors / attempts if attempts else math.nan
    report.slot_count = t
    report.measured_eta_phi = soft_high / soft_acks if soft_acks else None
    report.seed = config.seed
    report.config = config.to_dict()
    report.slots = slots
    return report


def _select_level(config: SessionConfig, chunk_index: int, samples: list[float],
                  buffer_s: float, b_max: float, last_level: int, clock: float,
                  ladder: BitrateLadder) -> int:
    if chunk_index == 0:
        return 0
    kind = config.abr.kind
    player = PlayerState(buffer_s=buffer_s, buffer_max_s=b_max,
                         last_level=last_level, clock_s=clock)
    if kind is AbrKind.BUFFER:
        return buffer_based_select(player, ladder, config.abr.reservoir_s,
                                   config.abr.cushion_s)
    if not samples:
        return 0
    history = CapacityHistory(config.prediction.interval_s, samples,
                              window_n=config.prediction.window_n)
    if kind is AbrKind.MPC:
        return mpc_select(player, ladder, history, config.abr.mpc)
    if kind is AbrKind.RATE:
        return rate_based_select(history, ladder)
    return hybrid_select(player, history, ladder, config.abr.safety)


@dataclass
class ConvergenceReport:
    """Link-only run: realized errors plus the controller's operating point.

    ``policy_bler`` is the oracle error probability of the MCS chosen each
    slot, i.e. the realized error series with the Bernoulli measurement noise
    integrated out; time-to-tolerance is measured on it by default since the
    realized series needs thousands of slots per sample point at these error
    rates.
    """

    mode: LinkMode
    n_slots: int
    errors: np.ndarray
    policy_bler: np.ndarray
    offsets: np.ndarray
    window_slots: int
    trailing_slots: int
    converged_bler: float
    converged_policy_bler: float
    measured_eta_phi: float | None
    fixed_point_olla: float
    fixed_point_soft: float | None
    conditions: object
    final_offset_db: float

    @property
    def windowed_bler(self) -> np.ndarray:
        n = self.errors.size - self.errors.size % self.window_slots
        if n == 0:
            return np.empty(0)
        return self.errors[:n].reshape(-1, self.window_slots).mean(axis=1)

    def slots_to_within(self, tol: float = 0.05, use_policy: bool = True) -> int:
        """First slot count after which the cumulative mean stays within tol
        of the converged value."""
        series = self.policy_bler if use_policy else self.errors
        conv = self.converged_policy_bler if use_policy else self.converged_bler
        cum = np.cumsum(series) / np.arange(1, series.size + 1)
        bad = np.nonzero(np.abs(cum - conv) > tol)[0]
        return 1 if bad.size == 0 else int(bad[-1]) + 2

    def summary_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "n_slots": self.n_slots,
            "converged_bler": self.converged_bler,
            "converged_policy_bler": self.converged_policy_bler,
            "trailing_slots": self.trailing_slots,
            "window_slots": self.window_slots,
            "windowed_bler": [float(x) for x in self.windowed_bler],
            "slots_to_within_0.05": self.slots_to_within(0.05),
            "measured_eta_phi": self.measured_eta_phi,
            "fixed_point_olla": self.fixed_point_olla,
            "fixed_point_soft": self.fixed_point_soft,
            "final_offset_db": self.final_offset_db,
            "conditions": dataclasses.asdict(self.conditions),
        }


_STATIONARY_KINDS = (ChannelKind.CONSTANT, ChannelKind.TWO_STATE_MARKOV)


def run_convergence(config: SessionConfig, n_slots: int,
                    window_slots: int = 500) -> ConvergenceReport:
    """Run the link layer alone on a stationary channel and track BLER.

    No playback or allocation dynamics: the grid stays at e_max and every
    slot transmits one block. Rejects channel models whose statistics drift
    over time, since the fixed points assume stationarity.
    """
    config.validate()
    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")
    ch = config.channel
    stationary = ch.kind in _STATIONARY_KINDS or (
        ch.kind is ChannelKind.FADED_AR1 and ch.swing_db == 0.0)
    if not stationary:
        raise ValueError(
            f"run_convergence requires a stationary channel, got {ch.kind.value} "
            f"with swing {ch.swing_db} dB")

    table = config.build_table()
    dt = config.slot_duration_s
    delay = config.csi.report_delay_slots
    sigma = config.csi.estimation_noise_sigma_db

    streams = _Streams(config.seed)
    proc = SnrProcess(ch, dt, streams.trace_rng)
    true_snr = proc.take(n_slots)
    noise = (streams._noise_rng.standard_normal(n_slots) * sigma
             if sigma > 0 else np.zeros(n_slots))
    idx = np.maximum(0, np.arange(n_slots) - delay)
    est_series = true_snr[idx] + noise
    unif = streams._err_rng.random(n_slots)

    state = config.link.initial_state()
    prev_fb: HarqFeedback | None = None
    errors = np.zeros(n_slots, dtype=np.uint8)
    policy = np.zeros(n_slots)
    offsets = np.zeros(n_slots)
    soft_high = 0
    soft_acks = 0

    for t in range(n_slots):
        mcs, state = link_adapt_step(state, float(est_series[t]), prev_fb, table)
        if state.mode is LinkMode.SOFT_ACK and prev_fb is HarqFeedback.ACK:
            soft_acks += 1
            if state.last_feedback is HarqFeedback.HIGH_MARGIN_ACK:
                soft_high += 1
        p = true_bler(float(true_snr[t]), mcs, table, config.bler)
        err = unif[t] < p
        errors[t] = err
        policy[t] = p
        offsets[t] = state.offset_db
        prev_fb = HarqFeedback.NACK if err else HarqFeedback.ACK

    trailing = min(10_000, max(n_slots // 5, 1))
    eta = soft_high / soft_acks if soft_acks else None
    delta_down = config.link.resolved_delta_down()
    fp_olla = olla_fixed_point(config.link.delta_up_db, delta_down)
    fp_soft = None
    if state.mode is LinkMode.SOFT_ACK and eta and eta > 0:
        fp_soft = soft_fixed_point(config.link.delta_up_db, delta_down, eta)
    return ConvergenceReport(
        mode=config.link.mode,
        n_slots=n_slots,
        errors=errors,
        policy_bler=policy,
        offsets=offsets,
        window_slots=window_slots,
        trailing_slots=trailing,
        converged_bler=float(errors[-trailing:].mean()),
        converged_policy_bler=float(policy[-trailing:].mean()),
        measured_eta_phi=eta,
        fixed_point_olla=fp_olla,
        fixed_point_soft=fp_soft,
        conditions=check_convergence_conditions(
            config.link.delta_up_db, delta_down, eta),
        final_offset_db=float(state.offset_db),
    )


SWEEP_AXES = ("prediction_interval", "abr", "link_mode", "ra_policy", "mean_snr_db")


def apply_axis(config: SessionConfig, axis: str, value) -> SessionConfig:
    """Derive a config with one swept parameter replaced."""
    if axis == "prediction_interval":
        return replace(config, prediction=replace(config.prediction,
                                                  interval_s=float(value)))
    if axis == "abr":
        return replace(config, abr=replace(config.abr, kind=AbrKind(value)))
    if axis == "link_mode":
        return replace(config, link=replace(config.link, mode=LinkMode(value)))
    if axis == "ra_policy":
        return replace(config, mac=replace(config.mac, policy=RaPolicy(value)))
    if axis == "mean_snr_db":
        return replace(config, channel=replace(config.channel,
                                               mean_snr_db=float(value)))
    raise ValueError(f"unknown sweep axis {axis!r}; known: {', '.join(SWEEP_AXES)}")


@dataclass
class SweepResult:
    axis: str
    values: list
    seeds: list[int]
    reports: list[list[SessionReport]]  # [value][seed]

    def mean_metric(self, attr: str) -> list[float]:
        return [sum(getattr(r, attr) for r in row) / len(row)
                for row in self.reports]


def run_sweep(config: SessionConfig, axis: str, values,
              seeds: list[int] | None = None) -> SweepResult:
    """One session per (axis value, seed); the seed list is shared across values."""
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    if seeds is None:
        seeds = [config.seed]
    reports = []
    for value in values:
        derived = apply_axis(config, axis, value)
        reports.append([run_session(replace(derived, seed=s)) for s in seeds])
    return SweepResult(axis=axis, values=values, seeds=list(seeds),
                       reports=reports)
