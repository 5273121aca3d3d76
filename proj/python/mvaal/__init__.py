"""Active learning with a two-modality adversarial VAE sampler."""

import json as _json

from . import _core
from ._core import (
    ConfigError,
    Dataset,
    ResumeConflict,
    bottom_b,
    dice_score,
    emit_reports,
    gaussian_kl,
    load_dataset,
    mean_average_precision,
    overall_accuracy,
)

__all__ = [
    "ConfigError", "Dataset", "ResumeConflict", "Sampler", "bottom_b", "config_hash", "default_config",
    "dice_score", "emit_reports", "gaussian_kl", "generate_dataset", "load_config", "load_dataset",
    "mean_average_precision", "overall_accuracy", "resolve_config", "run_experiment",
]


def default_config():
    return _json.loads(_core._default_config())


def resolve_config(config=None):
    """Fill a partial config dict with defaults and validate it."""
    return _json.loads(_core._resolve_config(_json.dumps(config or {})))


def load_config(path=None, overrides=()):
    return _json.loads(_core._load_config(None if path is None else str(path), list(overrides)))


def config_hash(config=None):
    return _core._config_hash(_json.dumps(config or {}))


def generate_dataset(**spec):
    """Synthetic two-modality dataset; keyword arguments override the generator defaults."""
    return _core._generate_dataset(_json.dumps(spec))


def run_experiment(config=None, force=False, ablate_gamma3=False):
    return _json.loads(_core._run_experiment(_json.dumps(config or {}), force, ablate_gamma3))


class Sampler:
    """Task-agnostic sampler; mode is "mvaal" or "vaal". Images are [N,H,W] arrays."""

    def __init__(self, mode="mvaal", seed=0, **settings):
        self._impl = _core._Sampler(mode, _json.dumps(settings), seed)

    @property
    def mode(self):
        return self._impl.mode

    def train(self, labeled_m1, unlabeled_m1, labeled_m2=None, unlabeled_m2=None):
        return _json.loads(self._impl.train(labeled_m1, labeled_m2, unlabeled_m1, unlabeled_m2))

    def score(self, m1):
        return self._impl.score(m1)

    def select(self, unlabeled_m1, b):
        return self._impl.select(unlabeled_m1, b)
