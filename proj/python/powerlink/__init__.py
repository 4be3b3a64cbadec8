"""Path-based explanations for knowledge graph completion models."""

from ._core import (
    ContractError,
    DataError,
    IoError,
    KnowledgeGraph,
    Model,
    NumericError,
    ParseError,
    PowerlinkError,
    evaluate,
    explain,
    generate_planted,
    on_path_probability,
    path_loss,
    run_suite,
    train,
)

__all__ = [
    "ContractError",
    "DataError",
    "IoError",
    "KnowledgeGraph",
    "Model",
    "NumericError",
    "ParseError",
    "PowerlinkError",
    "evaluate",
    "explain",
    "generate_planted",
    "on_path_probability",
    "path_loss",
    "run_suite",
    "train",
]

__version__ = "0.1.0"
