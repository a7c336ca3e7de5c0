"""Temporal alignment of embedding sequences with entropic optimal transport,
temporal priors and a virtual frame for unmatched content."""

from .aligner import AlignmentResult, align_pair, decode_alignment
from .errors import VTAError
from .seqcore import EmbeddingSequence, Hyperparams, cost_matrix
from .sinkhorn import TransportPlan, sinkhorn_solve
from .synthgen import SynthConfig, generate_pair, scenario_suite
from .vavaloss import LossBreakdown, loss_gradient, total_loss, vava_loss

__version__ = "0.1.0"

__all__ = [
    "AlignmentResult", "EmbeddingSequence", "Hyperparams", "LossBreakdown", "SynthConfig",
    "TransportPlan", "VTAError", "align_pair", "cost_matrix", "decode_alignment",
    "generate_pair", "loss_gradient", "scenario_suite", "sinkhorn_solve", "total_loss",
    "vava_loss",
]
