"""Hard-constraint PINNs: projector, ansatz models and training runs.

Configs are the JSON documents read by the ``hardpinn`` command line tool,
given either as text or as a dict.
"""

import json
import os

import numpy as np

from . import _core
from ._core import ConfigError, general_solution, householder_basis

__all__ = [
    "ConfigError",
    "Model",
    "ablate",
    "canonical_config",
    "general_solution",
    "householder_basis",
    "run",
]


def _text(config):
    return config if isinstance(config, str) else json.dumps(config)


def canonical_config(config):
    """Config with every default filled in, as a dict."""
    return json.loads(_core.canonical_config(_text(config)))


def run(config, output_dir):
    """Train one configuration; returns final loss, parameters and error tables."""
    return _core.run(_text(config), os.fspath(output_dir))


def ablate(config, output_dir):
    """Train both ablation arms and return the MovVar ratio series."""
    return _core.ablate(_text(config), os.fspath(output_dir))


class Model(_core.Model):
    """Ansatz and training loss of a config, at its initial parameters."""

    def __init__(self, config):
        super().__init__(_text(config))

    def predict(self, xt):
        return super().predict(np.asarray(xt, dtype=float))

    def loss(self, theta=None):
        total, grad, groups = super().loss(self.parameters() if theta is None else list(theta))
        return total, np.asarray(grad), groups
