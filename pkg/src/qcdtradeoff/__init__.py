"""Rate versus detection-delay tradeoffs for joint communication and change detection."""

__version__ = "0.1.0"

from .channels import DiscreteSensingPair, MimoGaussianPair, ScalarGaussianPair, StateSequence
from .cscc import CsccCodebook, SubblockType, generate_codebook, quantize_type, rate_penalty
from .detectors import run_scs, run_sprt, threshold_for_far
from .mimo import mimo_region
from .prob_core import ChannelMatrix, Distribution, conditional_kl, entropy, kl_divergence, mutual_information
from .simulator import ExperimentConfig, estimate_far, estimate_wadd, fit_delay_slope, ml_decode
from .tradeoff import RegionCurve, blahut_arimoto_constrained, region_sweep, scalar_gaussian_region
