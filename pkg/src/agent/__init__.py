"""Decentralised utility network and exploration policy."""

from .utility import UtilityNetwork, UtilityOutput, UtilitySequence
from .exploration import epsilon_schedule, mask_unavailable, select_action, select_actions

__all__ = [
    "UtilityNetwork", "UtilityOutput", "UtilitySequence",
    "epsilon_schedule", "mask_unavailable", "select_action", "select_actions",
]
