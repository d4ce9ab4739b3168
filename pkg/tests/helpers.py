"""Shared builders for synthetic window batches and model states."""
import numpy as np

from tlmn.features import FEATURE_NAMES, EXEMPT_FEATURES, NormStats, WindowSet
from tlmn.network import init_state


def random_windows(cfg, n, rng, clear=None):
    feats = rng.normal(size=(n, cfg.window_len, cfg.n_features))
    cel = np.stack(
        [
            rng.uniform(-1, 1, (n, cfg.window_len)),
            rng.uniform(0, 1, (n, cfg.window_len)),
            rng.uniform(0, 1.2, (n, cfg.window_len)),
        ],
        axis=-1,
    )
    clear = rng.uniform(0, 1000, n) if clear is None else np.asarray(clear, dtype=float)
    ts = np.datetime64("2022-01-01T00:00:00") + np.arange(n) * np.timedelta64(3600, "s")
    return WindowSet(feats, cel, ts, rng.uniform(0, 1, n) * clear, clear)


def perturbed_state(cfg, seed, scale=0.5):
    """Random weights including non-zero calibration."""
    state = init_state(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    for name in ("calib.weight", "calib.bias"):
        state.params[name] = rng.normal(scale=scale, size=state.params[name].shape)
    return state


def some_norm_stats(seed=0):
    rng = np.random.default_rng(seed)
    exempt = np.array([n in EXEMPT_FEATURES for n in FEATURE_NAMES])
    return NormStats(rng.normal(size=len(FEATURE_NAMES)), rng.uniform(0.5, 3, len(FEATURE_NAMES)), exempt)
