"""Guaranteed-cost robust output-feedback synthesis for uncertain discrete-time systems."""

from .model import (CostFunctional, UncertainSystem, UncertaintyBlock, close_loop, sample_delta,
                    scalar_blocks, validate)
from .multiplier import MultiplierSet, s_matrix
from .sim import SimConfig, run as simulate
from .synth import SynthesisResult, certify, lqr, synth_dilated, synth_lemma

__version__ = "0.1.0"

__all__ = [
    "CostFunctional", "UncertainSystem", "UncertaintyBlock", "close_loop", "sample_delta",
    "scalar_blocks", "validate", "MultiplierSet", "s_matrix", "SimConfig", "simulate",
    "SynthesisResult", "certify", "lqr", "synth_dilated", "synth_lemma",
]
