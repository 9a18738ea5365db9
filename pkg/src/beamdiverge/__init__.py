"""Near-field beam training for uniform planar arrays with beam-diverging codewords."""

from .geometry import ArrayConfig, Direction, fresnel_distance, rayleigh_distance
from .wavefield import Codeword, diverging_codeword, focusing_codeword, normalized_response
from .codebook import FrustumIndex, RefinementPlan, ShellIndex
from .channel import MultipathChannel, sample_channel, snr_metrics
from .training import TrainingOutcome, oracle_from_channel, three_phase_train, two_phase_train

__version__ = "0.1.0"

__all__ = [
    "ArrayConfig", "Direction", "fresnel_distance", "rayleigh_distance",
    "Codeword", "diverging_codeword", "focusing_codeword", "normalized_response",
    "FrustumIndex", "RefinementPlan", "ShellIndex",
    "MultipathChannel", "sample_channel", "snr_metrics",
    "TrainingOutcome", "oracle_from_channel", "three_phase_train", "two_phase_train",
]
