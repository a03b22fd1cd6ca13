"""Generative saliency models: metrics, losses, synthetic data, training and prediction."""

import json

from . import _salgen
from ._salgen import (
    ConfigError,
    ShapeError,
    Model,
    chi2_distance,
    e_measure,
    edge_weight,
    f_measure,
    global_contrast,
    mae,
    s_measure,
    structure_loss,
    synth,
    write_synth,
)

__version__ = _salgen.__version__


def default_config():
    return json.loads(_salgen.default_config())


def validate_config(cfg):
    """Returns the fully populated config; raises ConfigError listing every problem."""
    return json.loads(_salgen.validate_config(json.dumps(cfg)))


def config_hash(cfg):
    return _salgen.config_hash(json.dumps(cfg))


def train(cfg, manifest, checkpoint):
    """Trains to completion and returns the per-step log records."""
    log = _salgen.train(json.dumps(cfg), manifest, checkpoint)
    return [json.loads(line) for line in log.splitlines() if line]


def evaluate(checkpoint, manifest, samples=0, seed=0):
    return json.loads(_salgen.evaluate(checkpoint, manifest, samples, seed))
