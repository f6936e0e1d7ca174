from .attention import AttentionNet, NetConfig, copy_params, policy_probs, sample_rule
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import Adam, clip_by_global_norm, global_norm

__all__ = [
    "AttentionNet", "NetConfig", "copy_params", "policy_probs", "sample_rule",
    "load_checkpoint", "save_checkpoint", "Adam", "clip_by_global_norm", "global_norm",
]
