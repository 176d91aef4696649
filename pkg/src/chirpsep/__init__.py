"""Separation and parameter estimation of pulsed linear chirps from IQ samples."""

from .estimation import (ChirpEstimate, NoSignalError, PipelineConfig, PipelineResult,
                         analyze_diagram, run_pipeline)
from .kernel import KernelSpec, LowPassFilter
from .signal_model import (ChirpPulseTrain, ConfigError, IQRecord, NoiseSpec, Scenario,
                           add_noise, synthesize)
from .sso import SnippetPlan, SSODiagram, build_diagram

__all__ = [
    "ChirpEstimate", "ChirpPulseTrain", "ConfigError", "IQRecord", "KernelSpec",
    "LowPassFilter", "NoSignalError", "NoiseSpec", "PipelineConfig", "PipelineResult",
    "Scenario", "SnippetPlan", "SSODiagram", "add_noise", "analyze_diagram",
    "build_diagram", "run_pipeline", "synthesize",
]
