import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tlmn.errors import ConfigError, ShapeError
from tlmn.manifold import ManifoldConfig, delay_embed, delay_embed_adjoint, reconstruct_window


def brute_embed(x, k, stride=1):
    rows = []
    for i in range(0, x.shape[0] - k + 1, stride):
        rows.append(np.concatenate([x[i + j] for j in range(k)]))
    return np.array(rows)


@st.composite
def windows(draw):
    k = draw(st.integers(1, 6))
    t = draw(st.integers(k, k + 10))
    f = draw(st.integers(1, 8))
    x = draw(hnp.arrays(np.float64, (t, f), elements=st.floats(-10, 10)))
    return x, k


class TestDelayEmbed:
    def test_table_shape(self):
        out = delay_embed(np.zeros((24, 22)), ManifoldConfig(5, 1))
        assert out.values.shape == (20, 110)
        assert out.source_len == 24 and out.feature_width == 22

    def test_identity_k1(self):
        x = np.random.default_rng(0).normal(size=(24, 22))
        assert np.array_equal(delay_embed(x, ManifoldConfig(1)).values, x)

    def test_single_row(self):
        x = np.random.default_rng(1).normal(size=(5, 22))
        out = delay_embed(x, ManifoldConfig(5)).values
        assert out.shape == (1, 110)
        assert np.array_equal(out[0], x.reshape(-1))

    def test_too_short(self):
        with pytest.raises(ShapeError):
            delay_embed(np.zeros((4, 3)), ManifoldConfig(5))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ManifoldConfig(0)
        with pytest.raises(ConfigError):
            ManifoldConfig(3, 0)

    @settings(max_examples=100)
    @given(windows(), st.integers(1, 3))
    def test_matches_brute_force(self, xk, stride):
        x, k = xk
        out = delay_embed(x, ManifoldConfig(k, stride)).values
        assert np.array_equal(out, brute_embed(x, k, stride))
        assert out.shape == ((x.shape[0] - k) // stride + 1, x.shape[1] * k)

    def test_batched(self):
        x = np.random.default_rng(2).normal(size=(3, 24, 22))
        out = delay_embed(x).values
        for b in range(3):
            assert np.array_equal(out[b], delay_embed(x[b]).values)

    def test_causality(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(24, 22))
        base = delay_embed(x).values
        k = 5
        for j in range(24):
            y = x.copy()
            y[j] += 1.0
            changed = np.flatnonzero(np.any(delay_embed(y).values != base, axis=1))
            assert changed.tolist() == list(range(max(0, j - k + 1), min(j, 19) + 1))

    @settings(max_examples=50)
    @given(windows())
    def test_lossless(self, xk):
        x, k = xk
        cfg = ManifoldConfig(k)
        assert np.array_equal(reconstruct_window(delay_embed(x, cfg), cfg), x)

    @settings(max_examples=50)
    @given(windows(), st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, xk, a, b):
        x, k = xk
        y = np.cos(x)
        cfg = ManifoldConfig(k)
        lhs = delay_embed(a * x + b * y, cfg).values
        rhs = a * delay_embed(x, cfg).values + b * delay_embed(y, cfg).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_adjoint(self):
        rng = np.random.default_rng(4)
        cfg = ManifoldConfig(5, 2)
        x = rng.normal(size=(2, 24, 7))
        g = rng.normal(size=delay_embed(x, cfg).values.shape)
        lhs = np.sum(delay_embed(x, cfg).values * g)
        rhs = np.sum(x * delay_embed_adjoint(g, 24, 7, cfg))
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_last_lag_rows(self):
        assert ManifoldConfig(5).last_lag_rows(24).tolist() == list(range(4, 24))
