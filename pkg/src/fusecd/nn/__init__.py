from .network import Network, NodeSpec, ParamStore, finite_diff_param_grads, relative_error
from .optim import AdamState, adam_step
from .builders import fusion_style_net, change_net, critic_net
from .checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "Network", "NodeSpec", "ParamStore", "finite_diff_param_grads", "relative_error",
    "AdamState", "adam_step",
    "fusion_style_net", "change_net", "critic_net",
    "save_checkpoint", "load_checkpoint",
]
