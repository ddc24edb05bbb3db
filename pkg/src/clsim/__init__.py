"""Slot-level simulator of closed-loop cross-layer adaptive video delivery."""

from .channel import (BlerKind, BlerModel, ChannelKind, ChannelModel, SnrTrace,
                      estimated_snr, gen_snr_trace, sample_block_error,
                      true_bler)
from .phy import (EesmConvention, HarqFeedback, LinkAdaptState, LinkMode,
                  McsEntry, McsTable, check_convergence_conditions,
                  classify_ack, eesm, estimate_bler, link_adapt_step,
                  mcs_lookup, olla_fixed_point, olla_update, shannon_bound,
                  soft_fixed_point, tb_size)
from .mac import (MacConfig, RaPolicy, VraTarget, full_grid_allocate,
                  multi_user_scale, target_tb_size, vra_allocate)
from .abr import (BitrateLadder, CapacityHistory, MpcConfig, PlayerState,
                  buffer_based_select, harmonic_mean_predict, hybrid_select,
                  mpc_select, qoe_chunk, rate_based_select, sample_capacity)
from .playback import (ChunkRecord, SessionReport, advance_buffer, aggregate,
                       chunk_throughput, rate_utilization, rebuffer_time)
from .engine import (AbrConfig, AbrKind, ConvergenceReport, CsiConfig,
                     EngineError, LinkConfig, PredictionConfig, SessionConfig,
                     SlotRecord, SweepResult, VideoConfig, run_convergence,
                     run_session, run_sweep)

__version__ = "0.1.0"
