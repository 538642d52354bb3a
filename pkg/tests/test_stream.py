import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fullsub.dsp import StftConfig
from fullsub.errors import InvalidArgument
from fullsub.features import CumulativeMeans, full_band_mean
from fullsub.model import FullBandBaseline, FullSubNet, SubBandBaseline
from fullsub.stream import (
    StreamEnhancer,
    bench_latency,
    enhance_offline,
    enhance_stream,
    latency_samples,
    offline_stats,
)

CFG = StftConfig(16, 8, 16)


def nets():
    return [
        FullSubNet(9, 2, 8, 6, seed=1, dtype=np.float64),
        FullBandBaseline(9, 6, 2, seed=1, dtype=np.float64),
        SubBandBaseline(9, 2, 5, seed=1, dtype=np.float64),
    ]


@pytest.fixture
def clip(rng):
    t = np.arange(300)
    return 0.3 * np.sin(0.2 * t) + 0.05 * rng.standard_normal(300)


def test_latency_default_settings():
    assert latency_samples(StftConfig(), 2) == 768
    assert 1000 * latency_samples(StftConfig(), 2) / 16000 == 48.0


@pytest.mark.parametrize("net", nets(), ids=lambda n: n.kind)
@pytest.mark.parametrize("norm", ["offline", "cumulative"])
def test_equivalence_sample_by_sample(net, norm, clip):
    stats = offline_stats(net, clip, CFG) if norm == "offline" else None
    ref = enhance_offline(net, clip, CFG, norm, stats)
    out = enhance_stream(net, clip, CFG, norm, stats, block=1)
    assert out.shape == clip.shape
    assert np.max(np.abs(out - ref)) < 1e-5


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=20))
def test_chunk_invariance(sizes):
    net = nets()[0]
    x = np.sin(0.1 * np.arange(200)) + 0.01
    whole = StreamEnhancer(net, CFG)
    a = np.concatenate([whole.push_samples(x), whole.flush()])
    enh = StreamEnhancer(net, CFG)
    parts, pos = [], 0
    for n in sizes * 20:
        if pos >= len(x):
            break
        parts.append(enh.push_samples(x[pos : pos + n]))
        pos += n
    parts.append(enh.push_samples(x[pos:]))
    parts.append(enh.flush())
    np.testing.assert_array_equal(np.concatenate(parts), a)


def test_emitted_accounting(rng):
    net = nets()[0]
    enh = StreamEnhancer(net, CFG)
    x = rng.standard_normal(500)
    pos = 0
    while pos < len(x):
        n = int(rng.integers(1, 30))
        enh.push_samples(x[pos : pos + n])
        pos += n
        st = enh.state
        expect = max(0, (st.consumed // CFG.hop) * CFG.hop - enh.latency)
        assert st.emitted == expect


def test_silence_in_silence_out():
    for net in nets():
        out = enhance_stream(net, np.zeros(200), CFG)
        assert np.all(out == 0)


def test_cumulative_identity(rng):
    acc = CumulativeMeans(9, 1)
    frames = rng.random((12, 9))
    assert acc.update_full(frames[0]) == pytest.approx(frames[0].mean())
    for f in frames[1:]:
        last = acc.update_full(f)
    assert abs(last - full_band_mean(frames).item()) < 1e-12
    const = CumulativeMeans(9, 1)
    assert all(const.update_full(np.full(9, 0.25)) == 0.25 for _ in range(5))


def test_offline_requires_stats():
    with pytest.raises(InvalidArgument):
        StreamEnhancer(nets()[0], CFG, norm="offline")
    with pytest.raises(InvalidArgument):
        StreamEnhancer(nets()[0], CFG, norm="median")
    with pytest.raises(InvalidArgument):
        StreamEnhancer(nets()[0], StftConfig())


def test_reset(clip):
    enh = StreamEnhancer(nets()[0], CFG)
    a = enh.push_samples(clip)
    enh.reset()
    np.testing.assert_array_equal(enh.push_samples(clip), a)


def test_bench_report_and_scaling():
    cfg = StftConfig(256, 128, 256)
    small = bench_latency(FullSubNet(129, 4, 64, 48), seconds=1.0, reps=2, cfg=cfg)
    big = bench_latency(FullSubNet(129, 4, 256, 192), seconds=1.0, reps=2, cfg=cfg, keep_times=True)
    assert small["frames"] == 2 * (16000 // 128)
    for r in (small, big):
        assert r["p95_ms"] >= r["mean_ms"]
        assert r["max_ms"] >= r["p95_ms"]
    assert len(big["frame_ms"]) == big["frames"]
    assert big["mean_ms"] > small["mean_ms"]
