"""Pseudolaser Nav - monocular pseudo-laser navigation with an LSTM+FEG PPO policy."""

__version__ = "0.1.0"
__all__ = [
    "Config",
    "NavigationEnv",
    "Sensor",
    "ActorCritic",
    "PPOTrainer",
    "PolicyController",
    "spawn_scenario",
]

from pseudolaser_nav.config import Config
from pseudolaser_nav.env import NavigationEnv
from pseudolaser_nav.sensing import Sensor
from pseudolaser_nav.network import ActorCritic
from pseudolaser_nav.trainer import PPOTrainer
from pseudolaser_nav.evaluation import PolicyController
from pseudolaser_nav.scenarios import spawn_scenario
