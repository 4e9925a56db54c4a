"""Quantum reservoir processing of hybrid quantum-classical input sequences."""
from .dynamics import ReservoirConfig, Simulator, integrate, inject, run_sequence, warmup
from .experiments import RUNNERS, TASK_DEFAULTS, run_cell
from .harness import ExperimentSpec, ResultTable, emit_outputs, load_spec, run_experiment
from .operators import HilbertSpace, fidelity, partial_trace, project_spectrahedron, wigner
from .quantum_readout import ModeMixer, TrainSpec, nelder_mead, train_quantum_readout
from .readout import EsnConfig, esn_run, reconstruct_density, ridge_fit

__version__ = "0.1.0"

__all__ = [
    "EsnConfig",
    "ExperimentSpec",
    "HilbertSpace",
    "ModeMixer",
    "RUNNERS",
    "ReservoirConfig",
    "ResultTable",
    "Simulator",
    "TASK_DEFAULTS",
    "TrainSpec",
    "emit_outputs",
    "esn_run",
    "fidelity",
    "inject",
    "integrate",
    "load_spec",
    "nelder_mead",
    "partial_trace",
    "project_spectrahedron",
    "reconstruct_density",
    "ridge_fit",
    "run_cell",
    "run_experiment",
    "run_sequence",
    "train_quantum_readout",
    "warmup",
    "wigner",
]
