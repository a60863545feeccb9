"""Raft leader-election stability under packet loss.

An absorbing Markov chain model of follower candidacy, the network split
distribution it implies, and a heartbeat simulator to check it against.
"""

from raftsplit.split_model import (
    ModelParams,
    analyze,
    build_multi_timeout_chain,
    build_single_timeout_chain,
    fundamental_matrix,
)
from raftsplit.raft_sim import SimConfig, run_batch, run_trial

__all__ = [
    "ModelParams",
    "SimConfig",
    "analyze",
    "build_multi_timeout_chain",
    "build_single_timeout_chain",
    "fundamental_matrix",
    "run_batch",
    "run_trial",
]
