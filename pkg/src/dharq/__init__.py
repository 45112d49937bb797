"""
dharq: reliability and throughput analysis of deadline-constrained
retransmission schemes over Rayleigh block fading, in the
finite-blocklength regime.

Core layers:
  - fbl:        normal-approximation error probabilities and fading averages
  - channel:    seeded Rayleigh fading SNR streams
  - markov:     credit-banking chain analysis and the baseline schemes
  - simulate:   Monte Carlo packet-stream validation
  - experiments: grid runners shared by the HTTP service and the CLI
"""

from .channel import FadingSource, sample_snr, snr_from_db, snr_to_db
from .fbl import (
    ApproximationMode,
    AveragedError,
    AveragingConfig,
    CodeSpec,
    CombiningScheme,
    EpsilonCache,
    averaged_error,
    averaged_error_range,
    channel_dispersion,
    conditional_error,
    conditional_error_cc,
    conditional_error_ir,
    q_function,
)
from .markov import (
    DegenerateChainError,
    ErrorTable,
    ProtocolParams,
    TransitionMatrix,
    TxCounting,
    build_lambda,
    build_transition_matrix,
    dharq_analysis,
    dharq_per,
    dharq_per_m1_closed_form,
    dharq_throughput,
    fixed_tx_per,
    fixed_tx_throughput,
    harq_error_table,
    harq_per,
    harq_throughput,
    stationary_distribution,
)
from .simulate import (
    CdfStat,
    PacketOutcome,
    Protocol,
    SimConfig,
    SimResult,
    conditional_per_cdf,
    run,
    run_dharq,
    run_fixed,
    run_harq,
    run_replicated,
)

__version__ = "0.1.0"
