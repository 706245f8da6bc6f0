import pytest

from gdtsim.config import config_from_dict

# small budgets so whole episodes run in seconds
FAST = {
    "n_users": 12,
    "n_slots": 30,
    "loop": {"train_steps": 200, "n_label_traces": 20, "label_trace_len": 40},
    "abstraction": {"ae_steps": 100, "n_pretrain_windows": 64, "selector_pretrain_steps": 50},
    "decision": {"pretrain_snapshots": 3, "pretrain_samples": 4, "pretrain_steps": 4,
                 "dt_samples_per_epoch": 4, "train_steps_per_epoch": 4},
}


def fast_config(**overrides):
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in FAST.items()}
    for key, value in overrides.items():
        if isinstance(value, dict):
            data.setdefault(key, {}).update(value)
        else:
            data[key] = value
    return config_from_dict(data)


@pytest.fixture
def fast():
    return fast_config

