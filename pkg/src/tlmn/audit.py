"""Structural smoke tests that any model state must pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ModelConfig, ModelState, backward, forward_arrays, init_state
from .training import log_cosh_loss


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def random_batch(config: ModelConfig, n: int, rng: np.random.Generator, night: bool = False):
    """Random normalized windows with a plausible celestial signal."""
    feats = rng.standard_normal((n, config.window_len, config.n_features)) * rng.uniform(0.1, 5.0)
    cel = np.empty((n, config.window_len, config.calib_celestial_dim))
    cel[..., 0] = rng.uniform(-1.0, 1.0, cel.shape[:2])
    cel[..., 1] = rng.uniform(0.0, 1.0, cel.shape[:2])
    cel[..., 2] = rng.uniform(0.0, 1.2, cel.shape[:2])
    clear = np.zeros(n) if night else rng.uniform(0.0, 1100.0, n)
    return feats, cel, clear


def check_nocturnal_zero(state: ModelState, n: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    feats, cel, clear = random_batch(state.config, n, rng, night=True)
    pred, _, _ = forward_arrays(state, feats, cel, clear)
    bad = int(np.count_nonzero(pred != 0.0))
    return CheckResult("nocturnal_zero", bad == 0, f"{bad} of {n} night windows non-zero")


def check_clear_sky_bound(state: ModelState, n: int = 1000, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    feats, cel, clear = random_batch(state.config, n, rng)
    pred, _, _ = forward_arrays(state, feats, cel, clear)
    bound = state.config.alpha_max * clear
    bad = int(np.count_nonzero((pred < 0.0) | (pred > bound)))
    return CheckResult("clear_sky_bound", bad == 0, f"{bad} of {n} windows outside [0, alpha_max * clear]")


def gradient_check(
    state: ModelState, n_windows: int = 4, coords_per_tensor: int = 6, h: float = 1e-5, seed: int = 2
) -> float:
    """Max over tensors of ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf).

    Central differences on a random subset of coordinates of every tensor.
    """
    rng = np.random.default_rng(seed)
    feats, cel, clear = random_batch(state.config, n_windows, rng)
    target = rng.uniform(0.0, 1.0, n_windows) * clear
    st = state.copy()

    def loss() -> float:
        pred, _, _ = forward_arrays(st, feats, cel, clear)
        return log_cosh_loss(target, pred)[0]

    pred, _, trace = forward_arrays(st, feats, cel, clear)
    grads = backward(st, trace, log_cosh_loss(target, pred)[1])
    worst = 0.0
    for name, arr in st.params.items():
        flat = arr.reshape(-1)
        picks = rng.choice(flat.size, size=min(coords_per_tensor, flat.size), replace=False)
        num = np.empty(picks.size)
        for j, i in enumerate(picks):
            orig = flat[i]
            flat[i] = orig + h
            up = loss()
            flat[i] = orig - h
            down = loss()
            flat[i] = orig
            num[j] = (up - down) / (2 * h)
        ana = grads[name].reshape(-1)[picks]
        scale = max(np.abs(ana).max(), np.abs(num).max())
        if scale > 0:
            worst = max(worst, float(np.abs(ana - num).max() / scale))
    return worst


def check_gradients(state: ModelState, tol: float = 1e-5, seed: int = 2) -> CheckResult:
    err = gradient_check(state, seed=seed)
    return CheckResult("gradient_check", err < tol, f"max relative error {err:.2e} (tolerance {tol:g})")


def run_audit(state: ModelState | None = None, seed: int = 0) -> list[CheckResult]:
    state = state if state is not None else init_state(ModelConfig(), seed=seed)
    return [
        check_nocturnal_zero(state, seed=seed),
        check_clear_sky_bound(state, seed=seed + 1),
        check_gradients(state, seed=seed + 2),
    ]
