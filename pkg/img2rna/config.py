"""
Run configuration.

A run is configured by a nested dictionary with the sections ``data``,
``model``, ``train``, ``eval`` and ``synth`` plus a top-level ``seed`` from
which all random streams are derived. YAML files are merged onto
:data:`DEFAULT_CONFIG`; unknown keys are an error. Command-line flags are
applied last (flags > file > defaults).
"""
import copy

import yaml

from img2rna.exceptions import ConfigError
from img2rna.model import ModelConfig

DEFAULT_CONFIG = {
    "seed": 0,
    "data": {
        "raw_dir": None,
        "cohort_dir": None,
        "project": "SYNTH",
        "slice_size": 64,
        "min_tumor_voxels": 10,
        "max_slices": 16,
    },
    "model": {
        "cnn_channels": [8, 16, 32],
        "kernel_size": 3,
        "token_dim": 128,
        "encoder_layers": 8,
        "heads": 4,
        "mlp_hidden": 256,
        "head_dropout": 0.5,
    },
    "train": {
        "epochs": 30,
        "lr": 3e-4,
        "batch_size": 8,
        "betas": [0.9, 0.999],
        "eps": 1e-8,
        "split_fractions": [0.6, 0.2, 0.2],
    },
    "eval": {
        "alpha": 0.05,
        "permutation_threshold": 8,
        "permutations": 10000,
    },
    "synth": {
        "n_patients": 120,
        "latent_dim": 2,
        "planted_genes": 50,
        "null_genes": 450,
        "noise_std": 0.5,
        "baseline_log_expression": 3.0,
        "volume_size": 64,
        "spacing": [1.0, 1.0, 1.0],
        "modality": "MRI",
        "radius_range": [4.0, 12.0],
        "intensity_range": [1.0, 4.0],
        "background_std": 0.25,
        "position_jitter": 4.0,
        "max_retries": 20,
    },
}


def _merge_strict(base, updates, path=""):
    if not isinstance(updates, dict):
        raise ConfigError("Config section '%s' should be a mapping." % (path or "<root>"))
    for key, value in updates.items():
        where = "%s.%s" % (path, key) if path else key
        if key not in base:
            raise ConfigError("Unknown config key '%s'." % where)
        if isinstance(base[key], dict):
            _merge_strict(base[key], value, where)
        else:
            if isinstance(value, dict):
                raise ConfigError("Config key '%s' should be a value, not a mapping." % where)
            base[key] = value


def set_value(config, dotted_key, value):
    """Set ``config['a']['b']`` for ``dotted_key='a.b'`` (key must exist)."""
    keys = dotted_key.split(".")
    section = config
    for key in keys[:-1]:
        if key not in section or not isinstance(section[key], dict):
            raise ConfigError("Unknown config key '%s'." % dotted_key)
        section = section[key]
    if keys[-1] not in section:
        raise ConfigError("Unknown config key '%s'." % dotted_key)
    section[keys[-1]] = value


def validate_config(config):
    """Check value ranges that span several keys."""
    fractions = config["train"]["split_fractions"]
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("train.split_fractions should be 3 non-negative values summing to 1, "
                          "got %s." % (fractions,))
    alpha = config["eval"]["alpha"]
    if not 0.0 < alpha < 1.0:
        raise ConfigError("eval.alpha should be in (0, 1), got %s." % alpha)
    if config["train"]["epochs"] < 0 or config["train"]["batch_size"] < 1:
        raise ConfigError("train.epochs should be >= 0 and train.batch_size >= 1.")
    if config["train"]["lr"] < 0:
        raise ConfigError("train.lr should be >= 0, got %s." % config["train"]["lr"])
    if config["data"]["min_tumor_voxels"] < 1:
        raise ConfigError("data.min_tumor_voxels should be >= 1.")
    if config["eval"]["permutations"] < 1:
        raise ConfigError("eval.permutations should be >= 1.")
    # Model hyperparameters are validated by ModelConfig itself
    model_config(config, gene_count=1)
    return config


def load_config(path=None, overrides=None):
    """
    Resolve the run configuration.

    Parameters
    ----------
    path : str, optional
        YAML file merged onto the defaults.
    overrides : dict, optional
        Dotted keys (e.g. ``{'train.epochs': 5}``) applied after the file.

    Raises
    ------
    ConfigError
        On unknown keys, malformed files or invalid values.
    """
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                loaded = yaml.safe_load(f)
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError("Could not read config file '%s': %s" % (path, e))
        if loaded is not None:
            _merge_strict(config, loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            set_value(config, key, value)
    return validate_config(config)


def model_config(config, gene_count):
    """Build the ModelConfig of a run for ``gene_count`` genes."""
    m = config["model"]
    return ModelConfig(input_slice_size=config["data"]["slice_size"],
                       cnn_channels=tuple(m["cnn_channels"]),
                       kernel_size=m["kernel_size"],
                       token_dim=m["token_dim"],
                       encoder_layers=m["encoder_layers"],
                       heads=m["heads"],
                       mlp_hidden=m["mlp_hidden"],
                       head_dropout=m["head_dropout"],
                       gene_count=gene_count,
                       seed=config["seed"])


def data_dir(config, key, given=None):
    """
    Resolve an input directory: ``given`` (command line) or ``data.<key>``.

    Raises
    ------
    ConfigError
        When neither is set.
    """
    if given is not None:
        return given
    configured = config["data"][key]
    if configured is None:
        raise ConfigError("No %s given on the command line and data.%s is not set." % (key, key))
    return configured
