import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fullsub.dsp import StftConfig, istft, stft
from fullsub.errors import InvalidArgument, OutOfRange, ShapeMismatch
from fullsub.mask import CrmConfig, apply_mask, clamp_compressed, compress, compute_cirm, decompress
from fullsub.metrics import si_sdr

CRM = CrmConfig()


def random_spec(rng, shape=(20, 33)):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_config_validation():
    with pytest.raises(InvalidArgument):
        CrmConfig(K=0)
    with pytest.raises(InvalidArgument):
        CrmConfig(C=-1)


class TestCirm:
    def test_identity_when_clean_equals_noisy(self, rng):
        X = random_spec(rng)
        m = compute_cirm(X, X)
        np.testing.assert_allclose(m[..., 0], 1.0, atol=1e-8)
        np.testing.assert_allclose(m[..., 1], 0.0, atol=1e-8)

    def test_quarter_turn(self, rng):
        X = random_spec(rng)
        m = compute_cirm(X, 1j * X)
        np.testing.assert_allclose(m[..., 0], 0.0, atol=1e-8)
        np.testing.assert_allclose(m[..., 1], 1.0, atol=1e-8)

    def test_recovers_clean(self, rng):
        S, N = random_spec(rng), random_spec(rng)
        X = S + N
        Y = apply_mask(X, compute_cirm(X, S))
        ok = np.abs(X) > 1e-3
        assert np.max(np.abs(Y[ok] - S[ok]) / np.abs(S[ok] + 1e-30)) < 1e-6

    def test_relative_spectral_error_above_guard(self, rng):
        # level varies over six decades per bin; speech and noise share the gain
        gain = 10.0 ** rng.uniform(-6, 0, (50, 65))
        S, N = gain * random_spec(rng, (50, 65)), gain * random_spec(rng, (50, 65))
        X = S + N
        Y = apply_mask(X, compute_cirm(X, S))
        ok = np.abs(X) > 1e3 * CRM.eps
        assert np.linalg.norm(Y[ok] - S[ok]) / np.linalg.norm(S[ok]) < 1e-5

    def test_zero_bins_stay_finite(self):
        X = np.zeros((3, 4), complex)
        S = np.ones((3, 4), complex)
        assert np.all(np.isfinite(compute_cirm(X, S)))
        assert np.all(compute_cirm(X, S, CrmConfig(eps=0.0)) == 0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            compute_cirm(np.ones((2, 3)), np.ones((3, 2)))


class TestCompression:
    def test_examples(self):
        assert compress(0.0) == 0.0
        assert compress(1.0) == pytest.approx(10 * np.tanh(0.05), abs=1e-12)
        assert compress(1.0) == pytest.approx(0.4995837, abs=1e-7)
        assert compress(1e6) > 9.999999
        assert compress(1e6) < 10.0
        assert decompress(0.0) == 0.0
        assert decompress(0.4995837) == pytest.approx(1.0, abs=1e-6)

    def test_matches_logistic_form(self, rng):
        m = rng.uniform(-40, 40, 1000)
        K, C = CRM.K, CRM.C
        ref = K * (1 - np.exp(-C * m)) / (1 + np.exp(-C * m))
        np.testing.assert_allclose(compress(m), ref, atol=1e-12)

    def test_inverse_matches_log_form(self, rng):
        mc = rng.uniform(-9.9, 9.9, 1000)
        K, C = CRM.K, CRM.C
        np.testing.assert_allclose(decompress(mc), -(1 / C) * np.log((K - mc) / (K + mc)), atol=1e-10)

    @pytest.mark.parametrize("m", [-40.0, -1.0, 0.3, 7.0, 40.0])
    def test_round_trip_examples(self, m):
        assert abs(decompress(compress(m)) - m) < 1e-9

    @given(st.floats(-40, 40))
    def test_round_trip_property(self, m):
        assert abs(decompress(compress(m)) - m) < 1e-9

    @given(st.floats(-1e300, 1e300), st.floats(-1e300, 1e300))
    def test_odd_monotone_bounded(self, a, b):
        ca, cb = compress(a), compress(b)
        assert -CRM.K < ca < CRM.K
        assert compress(-a) == -ca
        if a < b:
            assert ca <= cb

    def test_strictly_increasing_on_working_range(self):
        m = np.linspace(-40, 40, 10001)
        assert np.all(np.diff(compress(m)) > 0)

    def test_decompress_rejects_boundary(self):
        with pytest.raises(OutOfRange):
            decompress(10.0)
        with pytest.raises(OutOfRange):
            decompress(np.array([0.0, -12.0]))
        with pytest.raises(OutOfRange):
            decompress(np.nan)

    def test_clamp_makes_any_output_decodable(self):
        raw = np.array([-50.0, -10.0, 0.0, 9.9999999, 10.0, 1e9])
        out = decompress(clamp_compressed(raw))
        assert np.all(np.isfinite(out))
        assert np.max(np.abs(clamp_compressed(raw))) == pytest.approx(CRM.K - 1e-6)


class TestApplyMask:
    def test_identity_and_zero(self, rng):
        X = random_spec(rng)
        one = np.zeros(X.shape + (2,))
        one[..., 0] = 1
        np.testing.assert_array_equal(apply_mask(X, one), X)
        np.testing.assert_array_equal(apply_mask(X, np.zeros(X.shape + (2,))), 0)

    def test_complex_product(self):
        X = np.array([[1 + 2j]])
        m = np.array([[[3.0, -1.0]]])
        assert apply_mask(X, m)[0, 0] == (1 + 2j) * (3 - 1j)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            apply_mask(np.ones((2, 3), complex), np.ones((2, 3)))


def test_oracle_chain_waveform(rng):
    cfg = StftConfig()
    s = rng.standard_normal(16000) * np.hanning(16000)
    x = s + 0.5 * rng.standard_normal(16000)
    X, S = stft(x, cfg), stft(s, cfg)
    m = compute_cirm(X, S, CrmConfig(eps=0.0))
    y = istft(apply_mask(X, m), cfg, length=len(x))
    assert si_sdr(y, s) > 50
