"""Dataset I/O, metrics, configuration and the command-line interface."""
from .config import RunConfig, load_config, parse_config
from .io import Track, load_sequence, load_trajectory, save_sequence, save_trajectory
from .metrics import MetricsReport, aggregate_metrics, align, compute_metrics

__all__ = [
    "MetricsReport", "RunConfig", "Track", "aggregate_metrics", "align", "compute_metrics", "load_config",
    "load_sequence", "load_trajectory", "parse_config", "save_sequence", "save_trajectory",
]
