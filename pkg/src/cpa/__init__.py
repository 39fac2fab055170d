"""Collaborative procedure alignment for paired feature sequences.

Joint step mining over a relational matrix, frame-to-step alignment as a
procedure distance, training losses, and a synthetic verification benchmark.
"""
from .core import Block, FeatureSequence, RelationalMatrix, block_consistency, compute_relational_matrix
from .csm import (
    BlockPartition,
    CsmTables,
    StepFeatures,
    backtrace,
    collaborative_step_mining,
    dynamic_procedure_matching,
    sample_step_features,
)
from .fsa import (
    AlignmentResult,
    AssignmentMatrix,
    VerificationDistance,
    alignment_distance,
    alignment_gradient,
    alignment_log_probability,
    alignment_posteriors,
    frame_to_step_probabilities,
)
from .losses import LossReport, align_loss, step_loss, task_loss_ce, task_loss_mse

__version__ = "0.1.0"
