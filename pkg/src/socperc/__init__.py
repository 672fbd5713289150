"""Self-organised critical bond percolation: model, coupling, separators and samplers."""
from .lattice import BoxGeometry, build_box, edge_order
from .percolation import (
    ClusterAnalysis,
    Configuration,
    FunctionalKind,
    analyze,
    evaluate_functional,
    feedback_p,
    functional_value,
    log_weight,
    phi_n,
    sample_bernoulli,
)

__version__ = "0.1.0"

__all__ = [
    "BoxGeometry",
    "ClusterAnalysis",
    "Configuration",
    "FunctionalKind",
    "analyze",
    "build_box",
    "edge_order",
    "evaluate_functional",
    "feedback_p",
    "functional_value",
    "log_weight",
    "phi_n",
    "sample_bernoulli",
]
