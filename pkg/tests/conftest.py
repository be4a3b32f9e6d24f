"""Shared fixtures and numerical oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from lss.data import gen_blobs
from lss.model import Batch, MlpSpec, init_params
from lss.params import ParamVector


def finite_diff_grad(fn, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, one coordinate at a time."""
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = eps
        g[k] = (fn(x + e) - fn(x - e)) / (2.0 * eps)
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    """Per-coordinate relative error with a floor guarding near-zero entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def random_batch(rng: np.random.Generator, spec: MlpSpec, size: int) -> Batch:
    return Batch(
        rng.standard_normal((size, spec.input_dim)),
        rng.integers(0, spec.num_classes, size),
    )


def perturbed(params: ParamVector, rng: np.random.Generator, scale: float = 0.3) -> ParamVector:
    return ParamVector(params.values + scale * rng.standard_normal(params.dim))


@pytest.fixture(scope="session")
def small_blobs():
    return gen_blobs(num_classes=6, per_class=80, input_dim=8, spread=1.0, seed=5)


@pytest.fixture(scope="session")
def softmax_spec():
    return MlpSpec(input_dim=8, hidden_dims=(), num_classes=6)


@pytest.fixture(scope="session")
def softmax_anchor(softmax_spec):
    return init_params(softmax_spec, 3)
