"""Synthesis and verification of fixed-point state-feedback controllers."""

from .errors import *  # noqa: F401,F403
from .fixedpoint import FixedFormat, FixedValue, quantize
from .interval import Box, Interval, IntervalMatrix
from .model import ContinuousPlant, Controller, DiscretePlant, SafetySpec, discretize
from .noise import build_noise_model, simulate
from .stability import completeness_threshold, jury_check
from .verify_aa import aa_cegis, aa_verify
from .verify_msv import msv_cegis

__version__ = "0.1.0"
