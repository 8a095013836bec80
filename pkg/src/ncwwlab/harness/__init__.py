"""Average engines, convergence diagnostics and experiment procedures."""
from .experiments import (
    ReturnTimeSample,
    StabilityReport,
    UniformScanResult,
    approximation_stability_probe,
    random_weight_family,
    rescale_family,
    return_time_experiment,
    uniform_ww_scan,
    visit_indices,
)
from .report import COLUMNS, SCHEMA_VERSION, Row, diagnostics_rows, rows_to_csv, scan_rows
from .streams import (
    AverageStream,
    ConvergenceDiagnostics,
    MovingStream,
    OrbitSums,
    StreamResult,
    build_diagnostics,
    dyadic_checkpoints,
    mangoldt_average_stream,
    moving_average_stream,
    moving_averages,
    multi_weighted_stream,
    prime_average_stream,
    subsequence_average_stream,
    subsequence_averages,
    verdict,
    weighted_average_stream,
    weighted_averages,
)
from .truncation import TruncationResult, envelope, truncate, truncation_search

__all__ = [name for name in dir() if not name.startswith("_")]
