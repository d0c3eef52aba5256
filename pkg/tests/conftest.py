from __future__ import annotations

import logging

import numpy as np
import pytest

from synadapt.model import ModelConfig

# the loss module warns on skipped instances; keep test output readable
logging.getLogger("synadapt.loss").setLevel(logging.ERROR)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_config():
    """Small enough for scalar oracles and finite differences."""
    return ModelConfig(hidden_dim=8, n_layers=2, n_heads=2, ffn_dim=16,
                       max_len=16, vocab_size=24, adapter_positions=(1,),
                       adapter_depth=2, bottleneck_dim=4, agg_dim=8)


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop oracle with strict left-to-right accumulation."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for kk in range(k):
                acc += a[i, kk] * b[kk, j]
            out[i, j] = acc
    return out
