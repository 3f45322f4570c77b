"""Target localization by a mobile sensor network with uncertain self-localization.

A particle filter over the target position carries, per particle, a bank of
EKFs over the agents' poses. Agents pick bank angles that maximize a
Gaussian approximation of the mutual information between their next
measurements and the target.
"""

from .belief import GaussianBelief, HybridBelief, MeasurementMoments
from .models import AgentState, MotionParams, SensorParams, TargetPosition
from .planner import ActionGrid, JointAction, plan_step
from .world import EpisodeConfig, run_episode, simulate

__all__ = [
    "ActionGrid",
    "AgentState",
    "EpisodeConfig",
    "GaussianBelief",
    "HybridBelief",
    "JointAction",
    "MeasurementMoments",
    "MotionParams",
    "SensorParams",
    "TargetPosition",
    "plan_step",
    "run_episode",
    "simulate",
]
