"""Value-decomposition mixers and TD machinery."""

from .qmix import MixerOutput, OPTMixer, VDNMixer, build_mixer, vdn_mix
from .td import compute_td_targets, sync_target, td_loss

__all__ = [
    "MixerOutput", "OPTMixer", "VDNMixer", "build_mixer", "vdn_mix",
    "compute_td_targets", "sync_target", "td_loss",
]
