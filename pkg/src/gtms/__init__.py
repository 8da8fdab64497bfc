"""Generalized transfer matrix states: deep Boltzmann machine wave functions
contracted exactly as products of spin-dependent transfer matrices."""

from .amplitude import Evaluator, ScaledAmplitude, amplitude, log_amplitude_ratio, log_derivatives
from .model import (Boundary, GtmsWeights, NetworkShape, ParamLayout, TiedWeights, tie, untie,
                    weights_from_json, weights_to_json)

__all__ = [
    "Boundary", "Evaluator", "GtmsWeights", "NetworkShape", "ParamLayout", "ScaledAmplitude",
    "TiedWeights", "amplitude", "log_amplitude_ratio", "log_derivatives", "tie", "untie",
    "weights_from_json", "weights_to_json",
]
