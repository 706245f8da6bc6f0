from .checkpoint import load_networks, save_networks
from .dense import DenseNetwork
from .gradcheck import check_model, gradient_check
from .optim import LOSSES, Optimizer, OptimizerConfig, assert_finite, huber, mse, train_step
from .recurrent import RecurrentCell
from .replay import ReplayBuffer

__all__ = [
    "DenseNetwork", "RecurrentCell", "ReplayBuffer", "Optimizer", "OptimizerConfig",
    "train_step", "mse", "huber", "LOSSES", "assert_finite", "gradient_check",
    "check_model", "save_networks", "load_networks",
]
