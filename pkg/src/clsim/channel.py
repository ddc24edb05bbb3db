"""Per-slot SNR processes and the ground-truth block-error oracle.

The physical channel is abstracted into two pieces: a per-slot SNR trace
(the ground truth the transmitter never sees exactly) and a parametric
block-error-rate model mapping (SNR, MCS) to an error probability. What the
link adaptor observes is a delayed, noise-corrupted reading of the trace,
which is exactly the mismatch that makes outer-loop correction necessary.

All randomness flows through caller-supplied seeds or generators, so traces
and error draws are reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SQRT2 = math.sqrt(2.0)


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def linear_to_db(x_lin: float) -> float:
    return 10.0 * math.log10(x_lin)


class ChannelKind(str, Enum):
    CONSTANT = "constant"
    FADED_AR1 = "faded_ar1"
    TWO_STATE_MARKOV = "two_state_markov"
    TRACE_REPLAY = "trace_replay"


# Sinusoidal drift period in seconds is SWING_PERIOD_SCALE / doppler_hz, so a
# faster-fading channel also drifts through its SNR range faster.
SWING_PERIOD_SCALE = 2000.0


@dataclass(frozen=True)
class ChannelModel:
    """Parametric description of one SNR process.

    ``mean_snr_db`` anchors the process. ``swing_db`` is the amplitude of a
    slow sinusoidal drift and ``ar1_sigma_db`` the stationary deviation of an
    AR(1) component whose coefficient is derived from ``doppler_hz``
    (rho = exp(-2*pi*f_d*slot)). The Markov kind alternates between two SNR
    levels with per-slot transition probabilities; trace replay cycles through
    a plain-text file of one SNR-in-dB value per line.
    """

    kind: ChannelKind = ChannelKind.CONSTANT
    mean_snr_db: float = 0.0
    swing_db: float = 0.0
    doppler_hz: float = 10.0
    ar1_sigma_db: float = 0.0
    markov_good_db: float = 5.0
    markov_bad_db: float = -5.0
    p_good_to_bad: float = 0.01
    p_bad_to_good: float = 0.05
    trace_path: str | None = None

    def validate(self, slot_duration_s: float) -> None:
        for name in ("mean_snr_db", "swing_db", "doppler_hz", "ar1_sigma_db",
                     "markov_good_db", "markov_bad_db"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"channel.{name} must be finite")
        if self.swing_db < 0:
            raise ValueError("channel.swing_db must be >= 0")
        if self.ar1_sigma_db < 0:
            raise ValueError("channel.ar1_sigma_db must be >= 0")
        if not 0.0 <= self.p_good_to_bad <= 1.0 or not 0.0 <= self.p_bad_to_good <= 1.0:
            raise ValueError("channel transition probabilities must be in [0, 1]")
        rho = ar1_coefficient(self.doppler_hz, slot_duration_s)
        if not 0.0 <= rho < 1.0:
            raise ValueError("AR(1) coefficient out of [0, 1); check doppler_hz")
        if self.kind is ChannelKind.TRACE_REPLAY and not self.trace_path:
            raise ValueError("trace_replay channel requires trace_path")


def ar1_coefficient(doppler_hz: float, slot_duration_s: float) -> float:
    """Map a Doppler frequency to the per-slot AR(1) coefficient."""
    return math.exp(-2.0 * math.pi * doppler_hz * slot_duration_s)


@dataclass
class SnrTrace:
    """Ground-truth per-slot SNR plus the observation model on top of it."""

    slot_duration_s: float
    samples: np.ndarray  # dB, one per slot
    estimation_noise_sigma_db: float = 1.0
    report_delay_slots: int = 4

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.slot_duration_s <= 0:
            raise ValueError("slot_duration_s must be > 0")
        if self.report_delay_slots < 0:
            raise ValueError("report_delay_slots must be >= 0")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("SNR trace contains non-finite samples")

    def __len__(self) -> int:
        return int(self.samples.size)


class SnrProcess:
    """Stateful sample stream for one channel realization.

    ``take(n)`` yields the next ``n`` per-slot SNR values; chained calls
    produce exactly the same sequence as a single larger call, which lets the
    session engine extend a trace on demand without breaking determinism.
    """

    def __init__(self, model: ChannelModel, slot_duration_s: float,
                 rng: np.random.Generator):
        model.validate(slot_duration_s)
        self.model = model
        self.slot_duration_s = slot_duration_s
        self._rng = rng
        self._slot = 0
        self._rho = ar1_coefficient(model.doppler_hz, slot_duration_s)
        self._innov_scale = model.ar1_sigma_db * math.sqrt(max(0.0, 1.0 - self._rho ** 2))
        self._ar_state = float(rng.standard_normal() * model.ar1_sigma_db) \
            if model.kind is ChannelKind.FADED_AR1 and model.ar1_sigma_db > 0 else 0.0
        self._markov_good = True
        self._replay: np.ndarray | None = None
        if model.kind is ChannelKind.TRACE_REPLAY:
            self._replay = _load_replay(model.trace_path)

    def take(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be >= 0")
        m = self.model
        t0 = self._slot
        out: np.ndarray
        if m.kind is ChannelKind.CONSTANT:
            out = np.full(n, m.mean_snr_db)
        elif m.kind is ChannelKind.FADED_AR1:
            out = np.full(n, m.mean_snr_db)
            if m.swing_db > 0:
                freq_hz = m.doppler_hz / SWING_PERIOD_SCALE
                t = (t0 + np.arange(n)) * self.slot_duration_s
                out += m.swing_db * np.sin(2.0 * math.pi * freq_hz * t)
            if m.ar1_sigma_db > 0:
                eps = self._rng.standard_normal(n) * self._innov_scale
                x = self._ar_state
                ar = np.empty(n)
                for i in range(n):
                    x = self._rho * x + eps[i]
                    ar[i] = x
                self._ar_state = x
                out += ar
        elif m.kind is ChannelKind.TWO_STATE_MARKOV:
            u = self._rng.random(n)
            out = np.empty(n)
            good = self._markov_good
            for i in range(n):
                out[i] = m.markov_good_db if good else m.markov_bad_db
                if good:
                    good = u[i] >= m.p_good_to_bad
                else:
                    good = u[i] < m.p_bad_to_good
            self._markov_good = good
        else:  # TRACE_REPLAY, cycles when the file is shorter than the run
            idx = (t0 + np.arange(n)) % self._replay.size
            out = self._replay[idx]
        self._slot = t0 + n
        return out


def _load_replay(path: str) -> np.ndarray:
    try:
        values = np.loadtxt(path, dtype=np.float64, ndmin=1)
    except OSError as exc:
        raise ValueError(f"cannot read SNR trace file {path!r}: {exc}") from exc
    if values.size == 0:
        raise ValueError(f"SNR trace file {path!r} is empty")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"SNR trace file {path!r} contains non-finite values")
    return values


def gen_snr_trace(model: ChannelModel, n_slots: int, slot_duration_s: float,
                  seed: int, estimation_noise_sigma_db: float = 1.0,
                  report_delay_slots: int = 4) -> SnrTrace:
    """Generate a trace of ``n_slots`` ground-truth SNR samples.

    Pure in (model, n_slots, slot_duration_s, seed): identical arguments give
    bit-identical traces.
    """
    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")
    proc = SnrProcess(model, slot_duration_s, np.random.default_rng(seed))
    return SnrTrace(slot_duration_s, proc.take(n_slots),
                    estimation_noise_sigma_db=estimation_noise_sigma_db,
                    report_delay_slots=report_delay_slots)


def estimated_snr(trace: SnrTrace, slot: int, rng: np.random.Generator) -> float:
    """The SNR reading the link adaptor sees for ``slot``.

    Returns the ground truth at ``max(0, slot - report_delay_slots)`` plus
    Gaussian estimation noise.
    """
    if not 0 <= slot < len(trace):
        raise IndexError(f"slot {slot} outside trace of length {len(trace)}")
    value = float(trace.samples[max(0, slot - trace.report_delay_slots)])
    if trace.estimation_noise_sigma_db > 0:
        value += float(rng.standard_normal()) * trace.estimation_noise_sigma_db
    return value


def estimated_series(trace: SnrTrace, rng: np.random.Generator) -> np.ndarray:
    """Vectorized ``estimated_snr`` over the whole trace (same contract)."""
    n = len(trace)
    idx = np.maximum(0, np.arange(n) - trace.report_delay_slots)
    out = trace.samples[idx].copy()
    if trace.estimation_noise_sigma_db > 0:
        out += rng.standard_normal(n) * trace.estimation_noise_sigma_db
    return out


class BlerKind(str, Enum):
    ERF = "erf"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class BlerModel:
    """Ground-truth block-error probability as a function of SNR margin.

    Both kinds are monotone non-increasing in SNR. The erf kind puts error
    probability 0.5 at ``alpha_db`` above the MCS threshold sign-flipped, i.e.
    bler = Q(margin + alpha_db). The logistic kind is
    (1 + exp(alpha0*margin - alpha1))**(-s); with the defaults it crosses
    0.5 at margin -1.11 dB and has a gentler slope than the erf kind.
    """

    kind: BlerKind = BlerKind.ERF
    alpha_db: float = 0.0
    alpha0: float = 1.0
    alpha1: float = -1.11
    s: float = 1.0

    def validate(self) -> None:
        for name in ("alpha_db", "alpha0", "alpha1", "s"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"bler.{name} must be finite")
        if self.kind is BlerKind.LOGISTIC and self.s <= 0:
            raise ValueError("logistic bler model requires s > 0")


def _q_tail(x: float) -> float:
    """Upper tail of the standard normal (1 - Phi(x))."""
    return 0.5 * math.erfc(x / SQRT2)


def true_bler(snr_db: float, mcs: int, table, model: BlerModel) -> float:
    """Ground-truth block-error probability for one transmission.

    ``table`` is a phy.McsTable; raises KeyError on an unknown MCS index.
    """
    margin = snr_db - table.threshold(mcs)
    if model.kind is BlerKind.ERF:
        return _q_tail(margin + model.alpha_db)
    x = model.alpha0 * margin - model.alpha1
    if x > 500.0:
        return 0.0
    return (1.0 + math.exp(x)) ** (-model.s)


def sample_block_error(bler: float, rng: np.random.Generator) -> bool:
    """One Bernoulli draw of a block decoding failure."""
    if not 0.0 <= bler <= 1.0:
        raise ValueError(f"bler must be in [0, 1], got {bler}")
    return bool(rng.random() < bler)
