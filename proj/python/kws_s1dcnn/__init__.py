"""Python bindings for the kws streaming keyword-spotting engine."""

from ._core import (
    Arch,
    ConfigError,
    Error,
    Model,
    ModelConfig,
    ShapeError,
    accounting,
    batch_smoothed_scores,
    build,
    extract_features,
    forward,
    frr_at_fa,
    load,
    reduce_svdf_model,
    save,
    stream_scores,
    verify_equivalence,
)

__all__ = [
    "Arch",
    "ConfigError",
    "Error",
    "Model",
    "ModelConfig",
    "ShapeError",
    "accounting",
    "batch_smoothed_scores",
    "build",
    "extract_features",
    "forward",
    "frr_at_fa",
    "load",
    "reduce_svdf_model",
    "save",
    "stream_scores",
    "verify_equivalence",
]
