"""Graph representation learning guided by small causal structures.

Synthetic biased motif datasets, a junction oracle with interchange
interventions, GNN training with auxiliary alignment losses, and an exact
enumeration lab for the supporting information bounds.
"""

from .graph import Dataset, Graph, decode_jsonl, encode_jsonl, validate_graph
from .models import GNN, GnnConfig, GraphBatch
from .oracle import CausalOracle
from .synth import GenSpec, annotate_junctions, generate
from .training import TrainConfig, TrainReport, evaluate, train

__all__ = [
    "CausalOracle",
    "Dataset",
    "GNN",
    "GenSpec",
    "GnnConfig",
    "Graph",
    "GraphBatch",
    "TrainConfig",
    "TrainReport",
    "annotate_junctions",
    "decode_jsonl",
    "encode_jsonl",
    "evaluate",
    "generate",
    "train",
    "validate_graph",
]
