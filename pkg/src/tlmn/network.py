"""Forward and backward passes of the gated irradiance network.

Pipeline for a batch of windows (B, T, F):

    delay embedding          (B, L, F*k)
    3 x causal dilated conv  (B, L, C), GELU after each
    FiLM calibration         (B, L, C), scale/shift from the celestial signal
    dense head               last position -> H -> GELU -> 1 logit
    alpha gate               pred = alpha(logit) * clear-sky GHI

All gradients are derived by hand; there is no autodiff dependency.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .features import FeatureWindow, NormStats, WindowSet
from .manifold import ManifoldConfig, delay_embed, delay_embed_adjoint

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715
REFERENCE_PARAMETER_COUNT = 63458
DEVIATION_NOTE = (
    "note: the reference total does not state the conv kernel size or the calibration layout; "
    "this build assumes kernel 4 and one linear map from the 3 celestial inputs to a per-channel "
    "scale and shift, so a small residual difference is expected"
)


@dataclass(frozen=True)
class ModelConfig:
    window_len: int = 24
    n_features: int = 22
    embed_k: int = 5
    embed_stride: int = 1
    channels: int = 64
    conv_kernel: int = 4
    dilations: tuple[int, ...] = (1, 2, 4)
    head_hidden: int = 32
    calib_celestial_dim: int = 3
    alpha_min: float = 0.0
    alpha_max: float = 1.0
    pooling: str = "last"

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        ds = self.dilations
        if not ds:
            raise ConfigError("at least one convolution layer is required")
        if any(d < 1 or d & (d - 1) for d in ds) or any(b <= a for a, b in zip(ds, ds[1:])):
            raise ConfigError(f"dilations must be strictly increasing powers of two, got {ds}")
        if min(self.window_len, self.n_features, self.channels, self.conv_kernel, self.head_hidden) < 1:
            raise ConfigError("sizes must be positive")
        if self.calib_celestial_dim != 3:
            raise ConfigError("the celestial signal has exactly 3 components")
        ManifoldConfig(self.embed_k, self.embed_stride).output_length(self.window_len)
        if (self.conv_kernel - 1) * max(ds) >= self.seq_len:
            raise ConfigError(
                f"(kernel - 1) * max dilation = {(self.conv_kernel - 1) * max(ds)} must be below seq_len {self.seq_len}"
            )
        if not 0.0 <= self.alpha_min < self.alpha_max <= 1.2:
            raise ConfigError(f"alpha bounds must satisfy 0 <= min < max <= 1.2, got [{self.alpha_min}, {self.alpha_max}]")
        if self.pooling not in ("last", "mean"):
            raise ConfigError(f"pooling must be 'last' or 'mean', got {self.pooling!r}")

    @property
    def manifold(self) -> ManifoldConfig:
        return ManifoldConfig(self.embed_k, self.embed_stride)

    @property
    def in_width(self) -> int:
        return self.n_features * self.embed_k

    @property
    def seq_len(self) -> int:
        return (self.window_len - self.embed_k) // self.embed_stride + 1

    def to_dict(self) -> dict:
        return {
            "window_len": self.window_len, "n_features": self.n_features, "embed_k": self.embed_k,
            "embed_stride": self.embed_stride, "channels": self.channels, "conv_kernel": self.conv_kernel,
            "dilations": list(self.dilations), "head_hidden": self.head_hidden,
            "calib_celestial_dim": self.calib_celestial_dim, "alpha_min": self.alpha_min,
            "alpha_max": self.alpha_max, "pooling": self.pooling,
        }  # fmt: skip

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter tensor shapes in canonical (serialization) order."""
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = config.in_width
    for i in range(len(config.dilations)):
        shapes[f"conv{i}.weight"] = (config.conv_kernel, c_in, config.channels)
        shapes[f"conv{i}.bias"] = (config.channels,)
        c_in = config.channels
    shapes["calib.weight"] = (config.calib_celestial_dim, 2 * config.channels)
    shapes["calib.bias"] = (2 * config.channels,)
    shapes["head1.weight"] = (config.channels, config.head_hidden)
    shapes["head1.bias"] = (config.head_hidden,)
    shapes["head2.weight"] = (config.head_hidden, 1)
    shapes["head2.bias"] = (1,)
    return shapes


@dataclass
class ParameterAudit:
    rows: list[tuple[str, str, int]]  # (layer, tensor shapes, count)
    total: int
    reference_total: int = REFERENCE_PARAMETER_COUNT

    @property
    def relative_deviation(self) -> float:
        return (self.total - self.reference_total) / self.reference_total

    def format_table(self) -> str:
        width = max(len(r[0]) for r in self.rows)
        swidth = max(len(r[1]) for r in self.rows)
        lines = [f"{'layer':<{width}}  {'tensors':<{swidth}}  {'params':>8}"]
        lines += [f"{name:<{width}}  {shapes:<{swidth}}  {n:>8,}" for name, shapes, n in self.rows]
        lines.append(f"{'total':<{width}}  {'':<{swidth}}  {self.total:>8,}")
        lines.append(f"reference total {self.reference_total:,}; deviation {self.relative_deviation:+.2%}")
        lines.append(DEVIATION_NOTE)
        return "\n".join(lines)


def parameter_count(config: ModelConfig = ModelConfig()) -> ParameterAudit:
    shapes = param_shapes(config)
    layers: dict[str, list[tuple[int, ...]]] = {}
    for name, shape in shapes.items():
        layers.setdefault(name.split(".")[0], []).append(shape)
    rows = []
    for layer, shs in layers.items():
        n = sum(int(np.prod(s)) for s in shs)
        label = layer
        if layer.startswith("conv"):
            label = f"{layer} (d={config.dilations[int(layer[4:])]})"
        rows.append((label, " + ".join("x".join(map(str, s)) for s in shs), n))
    return ParameterAudit(rows, sum(r[2] for r in rows))


@dataclass
class ModelState:
    """Trainable parameters plus the normalization baked in at training time.

    ``version`` increments on every in-place parameter update so that stale
    forward traces can be detected.
    """

    config: ModelConfig
    params: dict[str, np.ndarray]
    norm_stats: NormStats | None = None
    version: int = 0

    def __post_init__(self):
        expected = param_shapes(self.config)
        if list(self.params) != list(expected):
            missing = set(expected) - set(self.params)
            extra = set(self.params) - set(expected)
            if missing or extra:
                raise ShapeError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
            self.params = {k: self.params[k] for k in expected}
        for name, shape in expected.items():
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
            self.params[name] = arr

    def copy(self) -> "ModelState":
        return replace(self, params={k: v.copy() for k, v in self.params.items()})

    def bump(self) -> None:
        self.version += 1

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])


def init_state(config: ModelConfig = ModelConfig(), seed: int = 0, norm_stats: NormStats | None = None) -> ModelState:
    """Fan-in scaled uniform weights; zero calibration so FiLM starts as identity."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        layer = name.split(".")[0]
        if layer == "calib":
            params[name] = np.zeros(shape)
            continue
        if layer.startswith("conv"):
            fan_in = config.conv_kernel * (config.in_width if layer == "conv0" else config.channels)
        elif layer == "head1":
            fan_in = config.channels
        else:
            fan_in = config.head_hidden
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return ModelState(config, params, norm_stats)


# -- elementwise pieces -------------------------------------------------------


def gelu(x):
    """Tanh-approximated GELU."""
    x = np.asarray(x, dtype=np.float64)
    out = 0.5 * x * (1.0 + np.tanh(GELU_C * x * (1.0 + GELU_A * x * x)))
    return float(out) if out.ndim == 0 else out


def gelu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    t = np.tanh(GELU_C * x * (1.0 + GELU_A * x * x))
    out = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
    return float(out) if out.ndim == 0 else out


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


# -- layers ------------------------------------------------------------------


def _causal_columns(x: np.ndarray, kernel: int, dilation: int) -> np.ndarray:
    """(B, L, C) -> (B, L, kernel, C); tap j reads position t - j*dilation, zero before the start."""
    b, length, c = x.shape
    pad = (kernel - 1) * dilation
    xp = np.concatenate([np.zeros((b, pad, c), dtype=x.dtype), x], axis=1)
    return np.stack([xp[:, pad - j * dilation : pad - j * dilation + length, :] for j in range(kernel)], axis=2)


def _causal_columns_adjoint(dcols: np.ndarray, dilation: int) -> np.ndarray:
    b, length, kernel, c = dcols.shape
    pad = (kernel - 1) * dilation
    dxp = np.zeros((b, pad + length, c), dtype=dcols.dtype)
    for j in range(kernel):
        dxp[:, pad - j * dilation : pad - j * dilation + length, :] += dcols[:, :, j, :]
    return dxp[:, pad:, :]


def dilated_conv1d(x, weight, bias, dilation: int) -> np.ndarray:
    """Causal dilated convolution with left zero padding.

    ``x`` is (L, C_in) or (B, L, C_in); ``weight`` is (kernel, C_in, C_out)
    where tap ``j`` multiplies the input ``j * dilation`` steps in the past.
    """
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or weight.ndim != 3 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"cannot convolve input {x.shape} with kernel {weight.shape}")
    if np.shape(bias) != (weight.shape[2],):
        raise ShapeError(f"bias shape {np.shape(bias)} does not match {weight.shape[2]} output channels")
    k, c_in, c_out = weight.shape
    cols = _causal_columns(x, k, dilation)
    out = cols.reshape(x.shape[0], x.shape[1], k * c_in) @ weight.reshape(k * c_in, c_out) + bias
    return out[0] if single else out


def spectral_calibration(hidden, celestial, weight, bias) -> np.ndarray:
    """FiLM: out = (1 + tanh(c W_g + b_g)) * hidden + (c W_b + b_b), per position."""
    hidden = np.asarray(hidden, dtype=np.float64)
    c = hidden.shape[-1]
    raw = np.asarray(celestial, dtype=np.float64) @ weight + bias
    if raw.shape[-1] != 2 * c or raw.shape[:-1] != hidden.shape[:-1]:
        raise ShapeError(f"calibration output {raw.shape} does not match hidden {hidden.shape}")
    gamma = 1.0 + np.tanh(raw[..., :c])
    return gamma * hidden + raw[..., c:]


def transmissivity_head(hidden, w1, b1, w2, b2, pooling: str = "last"):
    """Reduce (…, L, C) over positions, then dense -> GELU -> dense to a scalar logit."""
    hidden = np.asarray(hidden, dtype=np.float64)
    pooled = hidden[..., -1, :] if pooling == "last" else hidden.mean(axis=-2)
    out = (gelu(pooled @ w1 + b1) @ w2 + b2)[..., 0]
    return float(out) if np.ndim(out) == 0 else out


def alpha_gate(alpha_logit, ghi_clear, alpha_min: float = 0.0, alpha_max: float = 1.0):
    """Map a logit to a bounded transmissivity and scale clear-sky GHI by it.

    Where ``ghi_clear == 0`` the prediction is exactly 0.0 whatever the logit.
    """
    logit = np.asarray(alpha_logit, dtype=np.float64)
    clear = np.asarray(ghi_clear, dtype=np.float64)
    alpha = np.clip(alpha_min + (alpha_max - alpha_min) * sigmoid(logit), alpha_min, alpha_max)
    pred = np.where(clear == 0.0, 0.0, alpha * clear)
    if pred.ndim == 0:
        return float(pred), float(alpha)
    return pred, alpha


# -- full network ------------------------------------------------------------


@dataclass
class ForwardTrace:
    state_id: int
    state_version: int
    embedded: np.ndarray  # (B, L, F*k)
    cols: list[np.ndarray]  # im2col input per conv layer
    pre: list[np.ndarray]  # conv pre-activations
    post: list[np.ndarray]  # conv outputs after GELU
    celestial: np.ndarray  # (B, L, 3)
    film_raw: np.ndarray  # (B, L, 2C)
    gamma_tanh: np.ndarray  # tanh of the scale logits
    calibrated: np.ndarray  # (B, L, C)
    pooled: np.ndarray  # (B, C)
    head_pre: np.ndarray  # (B, H)
    head_act: np.ndarray  # (B, H)
    logit: np.ndarray  # (B,)
    sig: np.ndarray  # (B,)
    alpha: np.ndarray
    ghi_clear: np.ndarray
    single: bool = False

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        out = {"manifold": self.embedded.shape[1:]}
        for i, h in enumerate(self.post):
            out[f"conv{i}"] = h.shape[1:]
        out["calibration"] = self.calibrated.shape[1:]
        out["head_hidden"] = self.head_pre.shape[1:]
        out["logit"] = self.logit.shape[1:]
        return out


def _batch_arrays(window):
    if isinstance(window, FeatureWindow):
        return (
            window.features[None], window.celestial[None], np.array([window.target_ghi_clear], dtype=np.float64), True
        )
    if isinstance(window, WindowSet):
        return window.features, window.celestial, np.asarray(window.target_ghi_clear, dtype=np.float64), False
    raise TypeError(f"expected FeatureWindow or WindowSet, got {type(window).__name__}")


def forward(state: ModelState, window: FeatureWindow | WindowSet):
    """Predict GHI for one window or a batch.

    Returns ``(ghi_pred, alpha, trace)``; scalars for a single window,
    arrays of length B for a :class:`WindowSet`.
    """
    features, celestial, clear, single = _batch_arrays(window)
    pred, alpha, trace = forward_arrays(state, features, celestial, clear)
    trace.single = single
    if single:
        return float(pred[0]), float(alpha[0]), trace
    return pred, alpha, trace


def forward_arrays(state: ModelState, features, celestial, ghi_clear):
    cfg = state.config
    p = state.params
    x = np.asarray(features, dtype=np.float64)
    cel = np.asarray(celestial, dtype=np.float64)
    clear = np.asarray(ghi_clear, dtype=np.float64).reshape(-1)
    expect = (cfg.window_len, cfg.n_features)
    if x.ndim != 3 or x.shape[1:] != expect:
        raise ShapeError(f"features have shape {x.shape}, expected (B, {expect[0]}, {expect[1]})")
    if cel.shape != (x.shape[0], cfg.window_len, cfg.calib_celestial_dim):
        raise ShapeError(f"celestial signal has shape {cel.shape}, expected (B, {cfg.window_len}, 3)")
    if clear.shape != (x.shape[0],):
        raise ShapeError(f"{clear.size} clear-sky values for {x.shape[0]} windows")
    if np.any(clear < 0):
        raise ShapeError("clear-sky GHI must be non-negative")

    embedded = delay_embed(x, cfg.manifold).values
    b, length, _ = embedded.shape
    h = embedded
    cols, pre, post = [], [], []
    for i, d in enumerate(cfg.dilations):
        w = p[f"conv{i}.weight"]
        k, c_in, c_out = w.shape
        col = _causal_columns(h, k, d).reshape(b, length, k * c_in)
        z = col @ w.reshape(k * c_in, c_out) + p[f"conv{i}.bias"]
        h = gelu(z)
        cols.append(col)
        pre.append(z)
        post.append(h)

    cel_pos = cel[:, cfg.manifold.last_lag_rows(cfg.window_len), :]
    raw = cel_pos @ p["calib.weight"] + p["calib.bias"]
    c = cfg.channels
    gt = np.tanh(raw[..., :c])
    y = (1.0 + gt) * h + raw[..., c:]

    pooled = y[:, -1, :] if cfg.pooling == "last" else y.mean(axis=1)
    a1 = pooled @ p["head1.weight"] + p["head1.bias"]
    g1 = gelu(a1)
    logit = (g1 @ p["head2.weight"] + p["head2.bias"])[:, 0]

    sig = sigmoid(logit)
    alpha = np.clip(cfg.alpha_min + (cfg.alpha_max - cfg.alpha_min) * sig, cfg.alpha_min, cfg.alpha_max)
    pred = np.where(clear == 0.0, 0.0, alpha * clear)
    trace = ForwardTrace(
        id(state), state.version, embedded, cols, pre, post, cel_pos, raw, gt, y, pooled, a1, g1, logit, sig, alpha,
        clear,
    )  # fmt: skip
    return pred, alpha, trace


def backward(state: ModelState, trace: ForwardTrace | None, d_pred, input_grad: bool = False) -> dict[str, np.ndarray]:
    """Gradients of a loss with respect to every parameter tensor.

    ``d_pred`` is dLoss/dPrediction per window. With ``input_grad`` the
    result also holds ``"features"``, the gradient with respect to the
    (normalized) input windows.
    """
    if trace is None:
        raise StateError("backward needs the trace from a matching forward call")
    if trace.state_id != id(state) or trace.state_version != state.version:
        raise StateError("stale forward trace: parameters changed since the forward pass")
    cfg = state.config
    p = state.params
    dp = np.asarray(d_pred, dtype=np.float64).reshape(-1)
    if dp.shape != trace.logit.shape:
        raise ShapeError(f"d_pred has {dp.size} entries for a batch of {trace.logit.size}")

    # gate: pred = alpha * clear, alpha = lo + (hi - lo) * sigmoid(logit)
    d_alpha = np.where(trace.ghi_clear == 0.0, 0.0, dp * trace.ghi_clear)
    d_logit = d_alpha * (cfg.alpha_max - cfg.alpha_min) * trace.sig * (1.0 - trace.sig)

    grads: dict[str, np.ndarray] = {}
    grads["head2.weight"] = trace.head_act.T @ d_logit[:, None]
    grads["head2.bias"] = np.array([d_logit.sum()])
    d_g1 = d_logit[:, None] * p["head2.weight"][:, 0][None, :]
    d_a1 = d_g1 * gelu_grad(trace.head_pre)
    grads["head1.weight"] = trace.pooled.T @ d_a1
    grads["head1.bias"] = d_a1.sum(axis=0)
    d_pooled = d_a1 @ p["head1.weight"].T

    b, length, c = trace.calibrated.shape
    d_y = np.zeros((b, length, c))
    if cfg.pooling == "last":
        d_y[:, -1, :] = d_pooled
    else:
        d_y[:] = d_pooled[:, None, :] / length

    h = trace.post[-1]
    gt = trace.gamma_tanh
    d_raw = np.concatenate([d_y * h * (1.0 - gt * gt), d_y], axis=-1)
    cel = trace.celestial.reshape(b * length, -1)
    grads["calib.weight"] = cel.T @ d_raw.reshape(b * length, -1)
    grads["calib.bias"] = d_raw.sum(axis=(0, 1))
    d_h = d_y * (1.0 + gt)

    for i in reversed(range(len(cfg.dilations))):
        w = p[f"conv{i}.weight"]
        k, c_in, c_out = w.shape
        d_z = d_h * gelu_grad(trace.pre[i])
        flat_dz = d_z.reshape(b * length, c_out)
        grads[f"conv{i}.weight"] = (trace.cols[i].reshape(b * length, k * c_in).T @ flat_dz).reshape(k, c_in, c_out)
        grads[f"conv{i}.bias"] = flat_dz.sum(axis=0)
        if i > 0 or input_grad:
            d_cols = (flat_dz @ w.reshape(k * c_in, c_out).T).reshape(b, length, k, c_in)
            d_h = _causal_columns_adjoint(d_cols, cfg.dilations[i])

    out = {name: grads[name] for name in param_shapes(cfg)}
    if input_grad:
        out["features"] = delay_embed_adjoint(d_h, cfg.window_len, cfg.n_features, cfg.manifold)
    return out


def predict(state: ModelState, windows: WindowSet | FeatureWindow, batch_size: int = 4096):
    """Inference without keeping traces; returns (pred, alpha) arrays."""
    if isinstance(windows, FeatureWindow):
        pred, alpha, _ = forward(state, windows)
        return pred, alpha
    preds, alphas = [], []
    for start in range(0, len(windows), batch_size):
        chunk = windows[start : start + batch_size]
        pr, al, _ = forward_arrays(state, chunk.features, chunk.celestial, chunk.target_ghi_clear)
        preds.append(pr)
        alphas.append(al)
    if not preds:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(preds), np.concatenate(alphas)
