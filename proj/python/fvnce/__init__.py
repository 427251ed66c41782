"""Python access to the fvnce scoring rules, oracle suite and trainer."""

import json

from ._fvnce import ScoringPair, combine, exp_clipped, stabilized_pair
from . import _fvnce

__all__ = ["ScoringPair", "combine", "default_config", "exp_clipped", "stabilized_pair",
           "sweep", "train", "verify"]


def verify():
    """Runs the exact oracle suite and returns the report as a dict."""
    return json.loads(_fvnce._verify_report())


def default_config():
    return json.loads(_fvnce._default_config())


def train(config=None, **overrides):
    """Trains in memory; returns per-epoch metrics as lists keyed by column."""
    cfg = dict(config or {})
    cfg.update(overrides)
    cfg.setdefault("out_dir", "")
    return _fvnce._train(json.dumps(cfg))


def sweep(config=None, **overrides):
    cfg = dict(config or {})
    cfg.update(overrides)
    return _fvnce._sweep(json.dumps(cfg))
