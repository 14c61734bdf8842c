import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from affectecho.autodiff import ShapeError, Tensor, spectral_conv
from affectecho.nn import SpectralConv1d


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def equivalent_kernel(w_re, w_im, modes, n):
    """Time-domain kernel whose circular convolution equals the spectral multiply."""
    H = np.zeros((n // 2 + 1, w_re.shape[1]), dtype=complex)
    H[:modes] = w_re + 1j * w_im
    return np.fft.irfft(H, n=n, axis=0)


def direct_circular_conv(x, h):
    """O(T^2) loop: y[t, c] = sum_s x[s, c] h[(t - s) mod T, c]."""
    n, C = x.shape
    y = np.zeros((n, C))
    for t in range(n):
        for s in range(n):
            y[t] += x[s] * h[(t - s) % n]
    return y


def relerr(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def test_fft_path_matches_direct_convolution_100_cases():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(8, 65))
        C = int(rng.integers(1, 4))
        modes = int(rng.integers(1, n // 2 + 2))
        x = rng.standard_normal((n, C))
        wr, wi = rng.standard_normal((modes, C)), rng.standard_normal((modes, C))
        y = spectral_conv(T(x), T(wr), T(wi), modes).data
        ref = direct_circular_conv(x, equivalent_kernel(wr, wi, modes, n))
        worst = max(worst, relerr(y, ref))
    assert worst < 1e-5


def test_identity_multiplier_full_band_is_identity(rng):
    for n in (8, 9, 32, 33):
        x = rng.standard_normal((2, n, 3))
        m = n // 2 + 1
        y = spectral_conv(T(x), T(np.ones((m, 3))), T(np.zeros((m, 3))), m).data
        np.testing.assert_allclose(y, x, atol=1e-12)


def test_linearity(rng):
    x_u, x_v = rng.standard_normal((16, 2)), rng.standard_normal((16, 2))
    wr, wi = rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
    a, b = 1.7, -0.3

    def op(x):
        return spectral_conv(T(x), T(wr), T(wi), 5).data
    np.testing.assert_allclose(op(a * x_u + b * x_v), a * op(x_u) + b * op(x_v), atol=1e-6)


def test_modes_invariance_beyond_band(rng):
    x = rng.standard_normal((24, 2))
    wr, wi = np.zeros((13, 2)), np.zeros((13, 2))
    wr[:4], wi[:4] = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
    base = spectral_conv(T(x), T(wr[:4]), T(wi[:4]), 4).data
    for m in range(5, 14):
        np.testing.assert_allclose(spectral_conv(T(x), T(wr[:m]), T(wi[:m]), m).data, base, atol=1e-12)


def test_modes_out_of_range():
    x = T(np.zeros((10, 1)))
    with pytest.raises(ValueError, match="modes"):
        spectral_conv(x, T(np.zeros((7, 1))), T(np.zeros((7, 1))), 7)
    with pytest.raises(ValueError):
        spectral_conv(x, T(np.zeros((0, 1))), T(np.zeros((0, 1))), 0)


def test_weight_shape_mismatch():
    with pytest.raises(ShapeError):
        spectral_conv(T(np.zeros((10, 2))), T(np.zeros((3, 1))), T(np.zeros((3, 1))), 3)


def test_layer_clamps_modes_to_short_inputs(rng):
    layer = SpectralConv1d(3, 16, rng, dtype=np.float64)
    y = layer(T(rng.standard_normal((1, 6, 3))))
    assert y.shape == (1, 6, 3)


@given(st.integers(8, 40), st.integers(0, 10 ** 6))
def test_output_is_real_and_shape_preserving(n, seed):
    rng = np.random.default_rng(seed)
    modes = int(rng.integers(1, n // 2 + 2))
    x = rng.standard_normal((n, 2))
    y = spectral_conv(T(x), T(rng.standard_normal((modes, 2))), T(rng.standard_normal((modes, 2))), modes).data
    assert y.shape == x.shape
    assert np.all(np.isfinite(y))


@given(st.integers(8, 40), st.integers(0, 40), st.integers(0, 10 ** 6))
def test_time_shift_equivariance(n, k, seed):
    rng = np.random.default_rng(seed)
    modes = int(rng.integers(1, n // 2 + 2))
    x = rng.standard_normal((n, 1))
    wr, wi = T(rng.standard_normal((modes, 1))), T(rng.standard_normal((modes, 1)))
    y = spectral_conv(T(x), wr, wi, modes).data
    y_shift = spectral_conv(T(np.roll(x, k, axis=0)), wr, wi, modes).data
    np.testing.assert_allclose(y_shift, np.roll(y, k, axis=0), atol=1e-10)
