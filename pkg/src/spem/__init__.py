"""Software model of a smart pressure e-mat.

A Velostat crossbar simulator, a scan/stream collection procedure, and
stream classifiers built on a small numpy neural-network engine.
"""

from .crossbar import CircuitParams, PressureFrame, SolverError, scan_frame, scan_row
from .dataset_io import Dataset, FormatError, read_dataset, split, write_dataset
from .scan import PressureStream, TimingConfig, collect_dataset, collect_stream
from .scene import MatGeometry, SubjectProfile, make_scene, pressure_at, rasterize
from .velostat import VelostatParams, VelostatState, init_state, step_state, target_conductance

__version__ = "0.1.0"

__all__ = [
    "CircuitParams", "Dataset", "FormatError", "MatGeometry", "PressureFrame", "PressureStream",
    "SolverError", "SubjectProfile", "TimingConfig", "VelostatParams", "VelostatState",
    "collect_dataset", "collect_stream", "init_state", "make_scene", "pressure_at", "rasterize",
    "read_dataset", "scan_frame", "scan_row", "split", "step_state", "target_conductance",
    "write_dataset",
]
