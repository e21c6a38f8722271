"""Risk scoring, selective advice policies, and a forecasting experiment harness."""

from .core import (
    DefendantCase,
    DomainError,
    GridPrediction,
    PredictionRecord,
    TreatmentKind,
    derive_seed,
    round_to_grid,
)

__version__ = "0.1.0"

__all__ = [
    "DefendantCase",
    "DomainError",
    "GridPrediction",
    "PredictionRecord",
    "TreatmentKind",
    "derive_seed",
    "round_to_grid",
    "__version__",
]
