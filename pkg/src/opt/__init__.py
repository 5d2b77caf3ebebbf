"""Interaction-prototype attention block and its auxiliary losses."""

from .layer import (
    EntityEmbedding, EntityEncoder, LayerOutput, OPTLayer, OPTStack,
    PrototypeSet, StackOutput, masked_mean,
)
from .losses import CMIPosterior, cd_loss, cmi_loss
from .op_counter import MacCounter, count_macs

__all__ = [
    "EntityEmbedding", "EntityEncoder", "LayerOutput", "OPTLayer", "OPTStack",
    "PrototypeSet", "StackOutput", "masked_mean",
    "CMIPosterior", "cd_loss", "cmi_loss", "MacCounter", "count_macs",
]
