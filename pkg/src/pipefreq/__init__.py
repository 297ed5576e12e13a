"""Carrier frequency estimation for pulsed RF records.

A bit-true model of a multi-lane fixed-point FFT front end: stimulus
generation and ADC quantization, pulse framing, lane distribution,
fixed-point FFT and peak pick, parabolic sub-bin refinement, and a
discrete-event model of the acquisition-to-host datapath.
"""
from .distributor import P2SConfig, compare_structures
from .fitting import FrequencyEstimate, estimate
from .framing import SampleFrame, estimate_period, pad_frame, split_frames
from .harness import ExperimentResult, run_pipeline, sweep
from .signal_gen import S12_0, S16_4, FixedPointFormat, StimulusConfig, generate_stimulus, quantize
from .spectral import FftConfig, PeakFlag, analyze_frame, fft_fixed
from .transfer_sim import DatapathConfig, TransferSimulator, run_simulation

__version__ = "0.1.0"

__all__ = [
    "P2SConfig", "compare_structures", "FrequencyEstimate", "estimate", "SampleFrame",
    "estimate_period", "pad_frame", "split_frames", "ExperimentResult", "run_pipeline",
    "sweep", "S12_0", "S16_4", "FixedPointFormat", "StimulusConfig", "generate_stimulus",
    "quantize", "FftConfig", "PeakFlag", "analyze_frame", "fft_fixed", "DatapathConfig",
    "TransferSimulator", "run_simulation",
]
