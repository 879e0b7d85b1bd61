"""Repair orientation and sampling-rate defects in WISDM-style wearable
sensor recordings, and measure the effect with a small 1D-CNN."""

from harrepair.ingest import Dataset, Sample, Track, load_dataset, parse_line, write_dataset
from harrepair.orientation import OrientationCase, RepairLog, detect_case, repair_track, repair_window
from harrepair.resample import RateEstimate, dataset_totals, estimate_rate, resample_track

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "OrientationCase",
    "RateEstimate",
    "RepairLog",
    "Sample",
    "Track",
    "dataset_totals",
    "detect_case",
    "estimate_rate",
    "load_dataset",
    "parse_line",
    "repair_track",
    "repair_window",
    "resample_track",
    "write_dataset",
]
