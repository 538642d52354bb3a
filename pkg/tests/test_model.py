import numpy as np
import pytest

from fullsub.errors import CorruptWeights, InvalidArgument, ShapeMismatch
from fullsub.model import (
    FullBandBaseline,
    FullSubNet,
    SubBandBaseline,
    build,
    count_params,
    load_weights,
    read_weight_file,
    save_weights,
)
from fullsub.nncore import finite_diff_gradients, lstm_param_count, max_relative_error


def small_fsn(**kw):
    args = dict(n_bins=9, n_neighbors=2, full_hidden=8, sub_hidden=6, seed=3, dtype=np.float64)
    args.update(kw)
    return FullSubNet(**args)


class TestParamCounts:
    def test_default_configuration(self):
        assert count_params(FullSubNet()) == 5_630_467
        assert count_params(FullBandBaseline()) == 6_039_042

    def test_single_layer(self):
        assert lstm_param_count(3, 5) == 180

    def test_subband_baseline(self):
        net = SubBandBaseline()
        assert net.params["sub.lstm1.W"].shape == (4 * 384, 31)
        assert count_params(net) == SubBandBaseline.param_count_formula(15, 384)

    @pytest.mark.parametrize("F,N,fh,sh,fl,sl", [(9, 2, 8, 6, 2, 2), (33, 4, 20, 10, 1, 3), (65, 4, 64, 48, 2, 2)])
    def test_formula_matches_construction(self, F, N, fh, sh, fl, sl):
        net = FullSubNet(F, N, fh, sh, fl, sl)
        assert count_params(net) == FullSubNet.param_count_formula(F, N, fh, sh, fl, sl)
        fb = FullBandBaseline(F, fh, fl + 1)
        assert count_params(fb) == FullBandBaseline.param_count_formula(F, fh, fl + 1)

    def test_build(self):
        assert isinstance(build("subband", n_bins=9, n_neighbors=1, hidden=4), SubBandBaseline)
        with pytest.raises(InvalidArgument):
            build("transformer")


class TestForward:
    def test_output_shapes(self, rng):
        mag = rng.random((192, 257)).astype(np.float32)
        assert FullSubNet()(mag).shape == (192, 257, 2)
        assert FullBandBaseline()(mag[:10]).shape == (10, 257, 2)
        assert SubBandBaseline()(mag[:10]).shape == (10, 257, 2)

    def test_zero_weights_zero_output(self, rng):
        for net in (small_fsn(), FullBandBaseline(9, 5, 2), SubBandBaseline(9, 2, 4)):
            net.zero_()
            assert np.all(net(np.zeros((6, 9))) == 0)
            assert np.all(net(rng.random((6, 9))) == 0)

    def test_shape_errors(self, rng):
        with pytest.raises(ShapeMismatch):
            small_fsn()(rng.random((5, 8)))
        with pytest.raises(InvalidArgument):
            small_fsn()(np.zeros((0, 9)))
        with pytest.raises(InvalidArgument):
            small_fsn().forward(rng.random((5, 9)), norm="global")

    def test_deterministic(self, rng):
        mag = rng.random((2, 7, 9))
        np.testing.assert_array_equal(small_fsn()(mag), small_fsn()(mag))

    def test_batch_matches_single(self, rng):
        net = small_fsn()
        mag = rng.random((3, 7, 9))
        out = net(mag)
        for b in range(3):
            np.testing.assert_allclose(out[b], net(mag[b]), atol=1e-13)

    def test_frequency_permutation_of_subband_batch(self, rng):
        # the sub-band stack treats its F sequences as independent batch items
        net = small_fsn()
        mag = rng.random((1, 7, 9))
        _, cache = net.forward(mag, keep=True)
        sb, mu_sub = cache[1], cache[2]
        from fullsub.nncore import lstm_sequence

        layers = net.stack("sub", 2)
        seqs = (sb / mu_sub).reshape(9, 7, -1)
        perm = rng.permutation(9)
        a, _ = lstm_sequence(seqs, layers)
        b, _ = lstm_sequence(seqs[perm], layers)
        np.testing.assert_allclose(b, a[perm], atol=1e-14)

    def test_frequency_independence(self, rng):
        net = small_fsn()
        mag = rng.random((1, 7, 9))
        stats = net.stats(mag)
        fb, _ = net.full_band(mag / stats[0])
        f = 4  # neighbourhood is bins 2..6
        changed = mag.copy()
        changed[..., [0, 8]] *= 5
        # hold the full-band output and every normalizer fixed
        net_fb = net.full_band
        net.full_band = lambda m, keep=False: (fb, None)
        try:
            a = net.forward(mag, stats=stats)[0]
            b = net.forward(changed, stats=stats)[0]
        finally:
            net.full_band = net_fb
        np.testing.assert_array_equal(a[:, :, f], b[:, :, f])
        assert not np.allclose(a[:, :, 0], b[:, :, 0])

    def test_cumulative_mode_last_frame_means(self, rng):
        net = small_fsn()
        mag = rng.random((1, 8, 9))
        a = net.forward(mag, norm="cumulative")[0]
        assert a.shape == (1, 8, 9, 2) and np.all(np.isfinite(a))

    def test_silent_input_finite(self):
        for net in (small_fsn(), FullBandBaseline(9, 5, 2, dtype=np.float64), SubBandBaseline(9, 2, 4, dtype=np.float64)):
            assert np.all(np.isfinite(net(np.zeros((5, 9)))))


def _gradcheck(net, rng, T=7, B=1):
    mag = rng.random((B, T, 9)) + 0.05
    target = rng.standard_normal((B, T, 9, 2))

    def f(_):
        out = net.forward(mag)[0]
        return float(np.sum((out - target) ** 2))

    out, cache = net.forward(mag, keep=True)
    grads = net.backward(2 * (out - target), cache)
    fd = finite_diff_gradients(f, net.params, step=1e-5)
    return max_relative_error(grads, fd)


class TestBackward:
    @pytest.mark.parametrize("seed", range(3))
    def test_fullsubnet(self, seed):
        assert _gradcheck(small_fsn(seed=seed), np.random.default_rng(seed)) < 1e-4

    def test_batched_fullsubnet(self, rng):
        assert _gradcheck(small_fsn(), rng, T=5, B=2) < 1e-4

    def test_fullband_baseline(self, rng):
        assert _gradcheck(FullBandBaseline(9, 5, 3, seed=1, dtype=np.float64), rng) < 1e-4

    def test_subband_baseline(self, rng):
        assert _gradcheck(SubBandBaseline(9, 2, 4, seed=1, dtype=np.float64), rng) < 1e-4


class TestWeightFile:
    def test_round_trip_bit_exact(self, tmp_path):
        net = small_fsn(dtype=np.float32)
        save_weights(net, tmp_path / "a.fsnw")
        other = small_fsn(seed=99, dtype=np.float32)
        load_weights(tmp_path / "a.fsnw", other)
        for k in net.params:
            np.testing.assert_array_equal(net.params[k], other.params[k])
        save_weights(other, tmp_path / "b.fsnw")
        assert (tmp_path / "a.fsnw").read_bytes() == (tmp_path / "b.fsnw").read_bytes()

    def test_layout(self, tmp_path):
        net = SubBandBaseline(9, 1, 2)
        save_weights(net, tmp_path / "w")
        raw = (tmp_path / "w").read_bytes()
        assert raw[:4] == b"FSNW"
        assert int.from_bytes(raw[4:6], "little") == 1
        assert int.from_bytes(raw[6:10], "little") == len(net.params)
        name = b"sub.lstm1.W"
        assert int.from_bytes(raw[10:12], "little") == len(name) and raw[12 : 12 + len(name)] == name
        assert list(read_weight_file(tmp_path / "w")) == list(net.params)

    def test_truncated(self, tmp_path):
        save_weights(small_fsn(), tmp_path / "w")
        raw = (tmp_path / "w").read_bytes()
        for cut in (3, 8, 20, len(raw) - 1):
            (tmp_path / "t").write_bytes(raw[:cut])
            with pytest.raises(CorruptWeights):
                read_weight_file(tmp_path / "t")

    def test_bad_magic_version_trailing(self, tmp_path):
        save_weights(small_fsn(), tmp_path / "w")
        raw = (tmp_path / "w").read_bytes()
        for bad in (b"XXXX" + raw[4:], raw[:4] + b"\x02\x00" + raw[6:], raw + b"\0"):
            (tmp_path / "b").write_bytes(bad)
            with pytest.raises(CorruptWeights):
                read_weight_file(tmp_path / "b")

    def test_shape_mismatch_names_tensor(self, tmp_path):
        save_weights(small_fsn(), tmp_path / "w")
        with pytest.raises(CorruptWeights, match="full.lstm1.W"):
            load_weights(tmp_path / "w", small_fsn(full_hidden=7))
        with pytest.raises(CorruptWeights, match="missing"):
            load_weights(tmp_path / "w", FullBandBaseline(9, 8, 3))
