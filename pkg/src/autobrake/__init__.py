"""DDPG brake/throttle control for longitudinal collision avoidance."""
from .ddpg import Agent, DdpgHyper, OUNoise, ReplayBuffer, Transition
from .env import (BrakingEnv, EpisodeOutcome, RewardWeights, Scenario, ScenarioConfig,
                  WorldState)
from .estimator import DDPGBrakeController
from .exceptions import ConfigurationError, NumericError, ParseError, UsageError
from .harness import RunConfig, run_eval, run_training
from .preprocessing import StateScaler

__all__ = [
    "Agent", "BrakingEnv", "ConfigurationError", "DDPGBrakeController", "DdpgHyper",
    "EpisodeOutcome", "NumericError", "OUNoise", "ParseError", "ReplayBuffer",
    "RewardWeights", "RunConfig", "Scenario", "ScenarioConfig", "StateScaler",
    "Transition", "UsageError", "WorldState", "run_eval", "run_training",
]
__version__ = "0.1.0"
