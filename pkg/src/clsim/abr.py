"""Application-layer bitrate decisions.

Capacity is measured at the link in uniform per-interval samples and
predicted with a harmonic mean over a sliding window; the planner enumerates
every bitrate trace over a short horizon against that prediction and keeps
the trace with the best total score of per-chunk quality minus switching and
rebuffering penalties. Three simpler selectors (rate-matched, buffer-mapped,
and a buffer/throughput hybrid) serve as baselines.

Bitrates are scored in Mbps; ladders are configured in kbps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# Floor for capacity samples before harmonic inversion, and for predictions
# used as divisors, in bits/s.
CAPACITY_FLOOR_BPS = 1.0


@dataclass(frozen=True)
class BitrateLadder:
    """Ascending encoding bitrates for fixed-duration chunks."""

    levels_kbps: tuple[float, ...]
    chunk_duration_s: float = 2.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "levels_kbps", tuple(float(x) for x in self.levels_kbps))
        if not self.levels_kbps:
            raise ValueError("ladder must have at least one level")
        if any(b <= a for a, b in zip(self.levels_kbps, self.levels_kbps[1:])):
            raise ValueError("ladder levels must be strictly ascending")
        if self.levels_kbps[0] <= 0:
            raise ValueError("ladder levels must be positive")
        if self.chunk_duration_s <= 0:
            raise ValueError("chunk_duration_s must be positive")

    def __len__(self) -> int:
        return len(self.levels_kbps)

    def chunk_size_bits(self, level: int) -> float:
        return self.levels_kbps[level] * 1000.0 * self.chunk_duration_s


@dataclass
class CapacityHistory:
    """Regularly spaced link-capacity samples in bits/s."""

    interval_s: float
    samples: list[float] = field(default_factory=list)
    window_n: int = 8

    def __post_init__(self) -> None:
        if self.interval_s <= 0:
            raise ValueError("interval_s must be positive")
        if self.window_n < 1:
            raise ValueError("window_n must be >= 1")
        if any(s < 0 for s in self.samples):
            raise ValueError("capacity samples must be nonnegative")


@dataclass(frozen=True)
class MpcConfig:
    horizon_chunks: int = 5
    qoe_alpha: float = 1.0
    qoe_beta: float = 4.3

    def validate(self) -> None:
        if self.horizon_chunks < 1:
            raise ValueError("horizon_chunks must be >= 1")
        if self.qoe_alpha < 0 or self.qoe_beta < 0:
            raise ValueError("QoE weights must be >= 0")


@dataclass
class PlayerState:
    buffer_s: float
    buffer_max_s: float
    last_level: int
    clock_s: float = 0.0


def sample_capacity(slot_log, interval_s: float, slot_duration_s: float,
                    window_n: int = 8, bits=None) -> CapacityHistory:
    """Aggregate per-slot delivered bits into uniform capacity samples.

    The interval must be a whole number of slots. Each sample is the bits
    delivered during the interval divided by the interval length; a trailing
    partial interval is dropped. ``bits`` overrides how many bits one slot
    record contributes (default: the slot's TB size if it decoded, else 0).
    """
    ratio = interval_s / slot_duration_s
    per = round(ratio)
    if per < 1 or abs(ratio - per) > 1e-9:
        raise ValueError(
            f"interval {interval_s}s is not a whole number of {slot_duration_s}s slots")
    if bits is None:
        bits = lambda rec: 0 if rec.error else rec.tb_bits
    samples = []
    acc = 0.0
    count = 0
    for rec in slot_log:
        acc += bits(rec)
        count += 1
        if count == per:
            samples.append(acc / interval_s)
            acc = 0.0
            count = 0
    return CapacityHistory(interval_s, samples, window_n=window_n)


def harmonic_mean_predict(history: CapacityHistory) -> float:
    """Harmonic mean of the last ``window_n`` capacity samples, in bits/s."""
    if not history.samples:
        raise ValueError("cannot predict from an empty capacity history")
    window = history.samples[-history.window_n:]
    inv = sum(1.0 / max(s, CAPACITY_FLOOR_BPS) for s in window)
    return len(window) / inv


def qoe_chunk(level_kbps: float, prev_level_kbps: float, rebuffer_s: float,
              alpha: float, beta: float) -> float:
    """Per-chunk score: bitrate minus switching and rebuffering penalties (Mbps units)."""
    a = level_kbps / 1000.0
    prev = prev_level_kbps / 1000.0
    return a - alpha * abs(a - prev) - beta * rebuffer_s


def mpc_select(state: PlayerState, ladder: BitrateLadder,
               history: CapacityHistory, cfg: MpcConfig) -> int:
    """Pick the next level by enumerating all level traces over the horizon.

    Downloads are simulated against the harmonic-mean prediction held
    constant across the horizon (per-interval accumulation collapses to one
    division for a constant rate). Buffer and rebuffer evolve per chunk, the
    trace with the greatest total score wins, and its first level is
    returned. Ties break toward the lower level index via ascending-order
    enumeration with strict improvement.
    """
    cfg.validate()
    pred = max(harmonic_mean_predict(history), CAPACITY_FLOOR_BPS)
    levels = ladder.levels_kbps
    sizes = [ladder.chunk_size_bits(l) for l in range(len(levels))]
    t_chunk = ladder.chunk_duration_s
    b_max = state.buffer_max_s
    alpha, beta = cfg.qoe_alpha, cfg.qoe_beta
    horizon = cfg.horizon_chunks

    best_score = -float("inf")
    best_first = 0

    # Depth-first over the level tree; prefixes are shared so each partial
    # trace is evaluated once.
    def descend(depth: int, prev_kbps: float, buffer_s: float, acc: float,
                first: int) -> None:
        nonlocal best_score, best_first
        for level in range(len(levels)):
            d = sizes[level] / pred
            rebuffer = d - buffer_s
            if rebuffer < 0.0:
                rebuffer = 0.0
            q = acc + qoe_chunk(levels[level], prev_kbps, rebuffer, alpha, beta)
            head = level if depth == 0 else first
            if depth + 1 == horizon:
                if q > best_score:
                    best_score = q
                    best_first = head
            else:
                nb = buffer_s - d
                if nb < 0.0:
                    nb = 0.0
                nb += t_chunk
                if nb > b_max:
                    nb = b_max
                descend(depth + 1, levels[level], nb, q, head)

    descend(0, levels[state.last_level], state.buffer_s, 0.0, 0)
    return best_first


def rate_based_select(history: CapacityHistory, ladder: BitrateLadder) -> int:
    """Highest level whose bitrate fits under the predicted capacity."""
    pred = harmonic_mean_predict(history)
    choice = 0
    for level, kbps in enumerate(ladder.levels_kbps):
        if kbps * 1000.0 <= pred:
            choice = level
    return choice


def buffer_based_select(state: PlayerState, ladder: BitrateLadder,
                        reservoir_s: float = 5.0, cushion_s: float = 10.0) -> int:
    """Map buffer occupancy linearly onto the ladder.

    Lowest level below the reservoir, top level once the buffer clears
    reservoir + cushion, floor-rounded interpolation in between.
    """
    if reservoir_s < 0 or cushion_s <= 0:
        raise ValueError("need reservoir_s >= 0 and cushion_s > 0")
    top = len(ladder) - 1
    if state.buffer_s < reservoir_s:
        return 0
    if state.buffer_s >= reservoir_s + cushion_s:
        return top
    frac = (state.buffer_s - reservoir_s) / cushion_s
    return min(top, int(frac * top))


def hybrid_select(state: PlayerState, history: CapacityHistory,
                  ladder: BitrateLadder, safety: float = 0.9) -> int:
    """Highest level whose download at a derated prediction fits in the buffer."""
    if not 0.0 < safety <= 1.0:
        raise ValueError("safety must be in (0, 1]")
    rate = max(safety * harmonic_mean_predict(history), CAPACITY_FLOOR_BPS)
    choice = 0
    for level in range(len(ladder)):
        if ladder.chunk_size_bits(level) / rate <= state.buffer_s:
            choice = level
    return choice
