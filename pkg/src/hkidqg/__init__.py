"""Diagram question generation from a target text and a concept.

The pipeline decomposes a diagram into a patch pyramid, keeps the patch per
layer that best matches the constraint, asks a vision-language backend for
knowledge about those patches, filters the knowledge with attention, and fuses
text and visual features through a tanh gate before decoding a question.
"""
from .core import ConfigError, Diagram, LinearMap, ShapeError, TextConstraint, make_rng
from .pipeline import PipelineConfig, RunRecord, generate, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "Diagram", "LinearMap", "PipelineConfig", "RunRecord", "ShapeError",
    "TextConstraint", "generate", "make_rng", "run_pipeline",
]
