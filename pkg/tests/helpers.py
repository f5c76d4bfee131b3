"""Builders shared across test modules."""

import numpy as np

from strmatch.model import AttentionBlockMaps, AttentionRecord, ModelConfig, init_weights
from strmatch.tensor import tensor

# small two-block model: 4x4 latents, one fine and one coarse block
SMALL_CONFIG = ModelConfig(width=8, heads=2, channels=3, levels=(0, 1),
                           base_hw=(4, 4), time_features=4)


def small_weights(seed=0):
    return init_weights(SMALL_CONFIG, seed=seed)


def stochastic_rows(rng, shape):
    """Random strictly-positive array whose last axis sums to 1."""
    raw = rng.random(shape) + 1e-3
    return raw / raw.sum(axis=-1, keepdims=True)


def make_record(f, n, h, seed=0, blocks=(0,), level=1):
    """Random attention record with valid row-stochastic maps."""
    rng = np.random.default_rng(seed)
    maps = [
        AttentionBlockMaps(
            block=b, level=level,
            self_map=tensor(stochastic_rows(rng, (f, h, n, n))),
            temporal_map=tensor(stochastic_rows(rng, (n, h, f, f))))
        for b in blocks
    ]
    return AttentionRecord(maps)


def uniform_record(f, n, h, blocks=(0,)):
    maps = [
        AttentionBlockMaps(
            block=b, level=1,
            self_map=tensor(np.full((f, h, n, n), 1.0 / n)),
            temporal_map=tensor(np.full((n, h, f, f), 1.0 / f)))
        for b in blocks
    ]
    return AttentionRecord(maps)


def identity_record(f, n, h, blocks=(0,)):
    eye_s = np.broadcast_to(np.eye(n), (f, h, n, n)).copy()
    eye_t = np.broadcast_to(np.eye(f), (n, h, f, f)).copy()
    maps = [
        AttentionBlockMaps(block=b, level=1,
                           self_map=tensor(eye_s), temporal_map=tensor(eye_t))
        for b in blocks
    ]
    return AttentionRecord(maps)
