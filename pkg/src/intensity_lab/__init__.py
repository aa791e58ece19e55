"""Measure and tune the visual intensity of interactive interface objects.

The package covers the whole loop: level-vector schedules per user contact,
per-level response accounting, sequence analysis with saturation detection,
a calibrated user simulator and a small decision service.
"""

from .errors import (
    CalibrationError,
    ConfigurationError,
    DegenerateSeriesError,
    FixtureParseError,
    IntensityLabError,
    InvalidLevelsError,
    UndefinedRateError,
)
from .estimators import BehaviorSimulator, ResponseProfile, SaturationDetector
from .metrics import (
    ExposureCounts,
    ExposureEvent,
    LevelStats,
    aggregate_events,
    build_level_table,
    change_rate,
    read_counts_csv,
    segment_stats,
)
from .objects import ElementSpec, LevelVector, ObjectSpec, aggregate_intensity, default_object_spec, validate_levels
from .schedule import PolicyKind, SchedulePolicy, full_schedule, level_vector_at
from .sequence import ResponseSeries, SaturationReport, detect_saturation, dtw, minkowski_distance, normalize
from .simulator import BehaviorModel, SimConfig, calibrate_from_table, run_experiment, simulate_population
from .serving import DecisionRequest, DecisionResponse, DecisionServer, ServingParams, assign_group

__version__ = "0.1.0"

__all__ = [
    "BehaviorModel",
    "BehaviorSimulator",
    "CalibrationError",
    "ConfigurationError",
    "DecisionRequest",
    "DecisionResponse",
    "DecisionServer",
    "DegenerateSeriesError",
    "ElementSpec",
    "ExposureCounts",
    "ExposureEvent",
    "FixtureParseError",
    "IntensityLabError",
    "InvalidLevelsError",
    "LevelStats",
    "LevelVector",
    "ObjectSpec",
    "PolicyKind",
    "ResponseProfile",
    "ResponseSeries",
    "SaturationDetector",
    "SaturationReport",
    "SchedulePolicy",
    "ServingParams",
    "SimConfig",
    "UndefinedRateError",
    "aggregate_events",
    "aggregate_intensity",
    "assign_group",
    "build_level_table",
    "calibrate_from_table",
    "change_rate",
    "default_object_spec",
    "detect_saturation",
    "dtw",
    "full_schedule",
    "level_vector_at",
    "minkowski_distance",
    "normalize",
    "read_counts_csv",
    "run_experiment",
    "segment_stats",
    "simulate_population",
    "validate_levels",
]
