"""Shared test fixtures and helpers."""

import os

import numpy as np
import pytest

from lstmkf.model import ModelDims
from lstmkf.streams import RegressionStream


def pytest_collection_modifyitems(config, items):
    """Skip multi-hour tests unless explicitly requested via env var."""
    if os.environ.get("LSTMKF_RUN_VERYLONG") == "1":
        return
    skip = pytest.mark.skip(reason="set LSTMKF_RUN_VERYLONG=1 to run")
    for item in items:
        if "verylong" in item.keywords:
            item.add_marker(skip)


def make_spd(rng, n, scale=1.0):
    """Random well-conditioned SPD matrix."""
    m = rng.standard_normal((n, n))
    return scale * (m.T @ m + np.eye(n))


def make_stream(seed, length, n_x=4, n_d=1, name="random"):
    """Random bounded stream: N(0,1) features plus bias, uniform targets."""
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((length, n_x - 1))
    x = np.column_stack([feats, np.ones(length)])
    d = rng.uniform(-1.0, 1.0, size=(length, n_d))
    return RegressionStream(name, x, d)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dims():
    return ModelDims(n_x=3, n_s=4, n_d=1)
