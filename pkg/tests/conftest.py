import numpy as np
import pytest

from alignvae.corpus import SentencePair
from alignvae.model import ModelConfig, build_params


def fd_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f() w.r.t. arr, in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        f_plus = f()
        flat[k] = orig - h
        f_minus = f()
        flat[k] = orig
        gflat[k] = (f_plus - f_minus) / (2.0 * h)
    return grad


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b) / denom))


@pytest.fixture
def toy_setup():
    """2-pair toy corpus with a small BoW model (vocab 10/10)."""
    cfg = ModelConfig(encoder="bow", d=4, d_x=8)
    params = build_params(cfg, 10, 10, seed=7)
    pairs = [
        SentencePair((0, 2, 3, 4), (2, 5, 6)),
        SentencePair((0, 5, 6), (7, 8, 9, 2)),
    ]
    rng = np.random.default_rng(11)
    noise = [rng.standard_normal((p.m, cfg.d)) for p in pairs]
    return cfg, params, pairs, noise
