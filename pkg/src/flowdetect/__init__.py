"""Composable state-machine engine with a streaming anomaly-detection pipeline."""

from .engine import (
    UNBOUNDED,
    Automaton,
    Call,
    Capture,
    Env,
    Event,
    EventPattern,
    Flow,
    QuantifiedFlow,
    QuantifiedInterleave,
    Ref,
    Transition,
    dump_state,
    init,
    is_final,
    step,
)
from .detectors import (
    CircularKMeans,
    CosineLof,
    Detector,
    Score,
    WrappedKde,
    circ_distance,
    init_map,
    percentile,
    silhouette,
    to_cartesian,
)
from .ensemble import Alert, ScoreBoard, majority_vote
from .pipeline import Pipeline, PipelineConfig, build_spec
from .windowing import (
    DEFAULT_DATE_FORMAT,
    Window,
    WindowConfig,
    compute_period,
    formatting_data,
    parse_timestamp,
    training_set,
)

__version__ = "0.1.0"

__all__ = [
    "Alert",
    "Automaton",
    "Call",
    "Capture",
    "CircularKMeans",
    "CosineLof",
    "DEFAULT_DATE_FORMAT",
    "Detector",
    "Env",
    "Event",
    "EventPattern",
    "Flow",
    "Pipeline",
    "PipelineConfig",
    "QuantifiedFlow",
    "QuantifiedInterleave",
    "Ref",
    "Score",
    "ScoreBoard",
    "Transition",
    "UNBOUNDED",
    "Window",
    "WindowConfig",
    "WrappedKde",
    "build_spec",
    "circ_distance",
    "compute_period",
    "dump_state",
    "formatting_data",
    "init",
    "init_map",
    "is_final",
    "majority_vote",
    "parse_timestamp",
    "percentile",
    "silhouette",
    "step",
    "to_cartesian",
    "training_set",
]
