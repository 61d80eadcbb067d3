"""Simulation of the controlled jump-diffusion and its fundamental flow."""

from .engine import ControlRecord, Skeleton, Trajectory, march
from .flow import FlowPair, correction_terms, fundamental_pair, inverse_flow, state_via_flow
from .noise import NoiseBundle, sample_noise
from .paths import PathBundle, assign_scenarios, simulate_paths
from .policy import CallableControl, ConstantControl, FeedbackControl, OpenLoopControl, Policy, as_policy

__all__ = [
    "CallableControl", "ConstantControl", "ControlRecord", "FeedbackControl", "FlowPair",
    "NoiseBundle", "OpenLoopControl", "PathBundle", "Policy", "Skeleton", "Trajectory",
    "as_policy", "assign_scenarios", "correction_terms", "fundamental_pair", "inverse_flow",
    "march", "sample_noise", "simulate_paths", "state_via_flow",
]
