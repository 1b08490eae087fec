"""Named run configurations.

Each preset is a partial run config; a user config file is merged on top
of it. The CSV presets carry column conventions only, so ``data.csv.path``
must come from the user.
"""

import copy

PRESETS = {
    "ou-regression": {
        "seed": 0,
        "data": {
            "ou": {"theta": 1.0, "mu": 0.0, "sigma": 0.5, "dt": 0.01, "x0": 0.0,
                   "n_steps": 20_005, "seed": 7, "method": "euler"},
            "n_lags": 5,
            "train_ratio": 0.7,
            "split_seed": 42,
        },
        "model": {"hidden": [], "squash": "tanh", "mix": False},
        "train": {"epochs": 10, "learning_rate": 1e-3, "batch_size": 64, "max_degree": 5,
                  "solver": "qubo-sa", "loss": "mse"},
    },
    # standardised features, log1p target, 80/20 seeded split
    "house-style": {
        "seed": 0,
        "data": {
            "csv": {"path": None, "feature_cols": None, "target_col": "price"},
            "standardize": True,
            "log1p_target": True,
            "train_ratio": 0.8,
            "split_seed": 42,
        },
        "model": {"hidden": [20], "squash": "tanh", "mix": False},
        "train": {"epochs": 50, "learning_rate": 1e-3, "batch_size": 64, "max_degree": 7,
                  "skip_default_degree": 3, "solver": "qubo-sa", "loss": "mse"},
    },
    # weighted loss and metric, 70/30 chronological split on date_id
    "janestreet-style": {
        "seed": 0,
        "data": {
            "csv": {"path": None, "feature_cols": "feature_*", "target_col": "responder_6",
                    "weight_col": "weight", "date_col": "date_id"},
            "train_ratio": 0.7,
            "split_seed": 42,
            "split_by_time": True,
            "max_rows": 200_000,
        },
        "model": {"hidden": [20], "squash": "tanh", "mix": False},
        "train": {"epochs": 50, "learning_rate": 1e-3, "batch_size": 64, "max_degree": 5,
                  "skip_default_degree": 5, "complexity_weight": 0.0,
                  "trainable_coefficients": True, "solver": "qubo-sa", "loss": "weighted_mse"},
    },
}

DEFAULTS = {
    "seed": 0,
    "data": {"n_lags": 5, "standardize": False, "log1p_target": False, "train_ratio": 0.7,
             "split_seed": 42, "split_by_time": False, "max_rows": None},
    "model": {"hidden": [], "squash": "tanh", "mix": False, "init_degree": 1},
    "train": {},
}


def get_preset(name):
    from .errors import ConfigError

    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])
