import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fullsub import data
from fullsub.dsp import StftConfig
from fullsub.errors import InvalidArgument, ShapeMismatch
from fullsub.metrics import EvalReport, evaluate_set, si_sdr, spectral_mse
from fullsub.train import OracleEstimator, make_enhancer

CFG = StftConfig(128, 64, 128)


class TestSiSdr:
    def test_perfect_and_scaled(self, rng):
        r = rng.standard_normal(100)
        assert si_sdr(r, r) == 100.0
        assert si_sdr(2 * r, r) == 100.0

    def test_hand_example(self):
        assert si_sdr(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == pytest.approx(0.0, abs=1e-12)

    def test_floor(self, rng):
        assert si_sdr(np.zeros(10), rng.standard_normal(10)) == -60.0

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            si_sdr(np.ones(3), np.zeros(3))
        with pytest.raises(ShapeMismatch):
            si_sdr(np.ones(3), np.ones(4))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.booleans())
    def test_scale_invariance(self, seed, c, neg):
        r = np.random.default_rng(seed)
        ref, est = r.standard_normal(64), r.standard_normal(64)
        c = -c if neg else c
        base = si_sdr(est, ref)
        assert si_sdr(c * est, ref) == pytest.approx(base, abs=1e-9)
        assert si_sdr(est, c * ref) == pytest.approx(base, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-30, 60))
    def test_orthogonal_noise_closed_form(self, seed, target_db):
        r = np.random.default_rng(seed)
        ref = r.standard_normal(256)
        e = r.standard_normal(256)
        e -= (e @ ref) / (ref @ ref) * ref
        alpha = 0.7
        e *= np.sqrt(alpha**2 * (ref @ ref) / (e @ e) / 10 ** (target_db / 10))
        assert si_sdr(alpha * ref + e, ref) == pytest.approx(target_db, abs=1e-9)


def test_spectral_mse(rng):
    x = rng.standard_normal(2000)
    assert spectral_mse(x, x, CFG) == 0.0
    assert spectral_mse(x + 0.1 * rng.standard_normal(2000), x, CFG) > 0


@pytest.fixture(scope="module")
def mixtures():
    clean = data.make_clean_set(6, 0.4, seed=3)
    noise = data.make_noise_set(3, 1.0, seed=4)
    return list(data.mix_stream(clean, noise, np.random.default_rng(5)))


class TestEvaluateSet:
    def test_identity(self, mixtures):
        rep = evaluate_set(lambda m: m.mixture, mixtures, cfg=CFG)
        for row, m in zip(rep.rows, mixtures):
            assert row.si_sdr == row.noisy_si_sdr
            assert row.reverberant == m.spec.reverberant

    def test_oracle(self, mixtures):
        rep = evaluate_set(make_enhancer(OracleEstimator(CFG), CFG), mixtures, cfg=CFG)
        assert rep.aggregate()["si_sdr"] > 50

    def test_aggregate_is_mean(self, mixtures):
        rep = evaluate_set(lambda m: 0.5 * m.mixture + 0.5 * m.speech, mixtures, cfg=CFG)
        agg = rep.aggregate()
        assert agg["si_sdr"] == pytest.approx(np.mean([r.si_sdr for r in rep.rows]))
        assert agg["clips"] == len(mixtures)
        s = rep.summary()
        assert s["with_reverb"]["clips"] + s["without_reverb"]["clips"] == len(mixtures)

    def test_empty(self):
        with pytest.raises(InvalidArgument):
            evaluate_set(lambda m: m, [])

    def test_csv_json(self, mixtures, tmp_path):
        rep = evaluate_set(lambda m: m.mixture, mixtures, [f"c{k}" for k in range(len(mixtures))], CFG)
        rep.rows[0].extra["stoi"] = 0.9
        rep.write_csv(tmp_path / "r.csv")
        header = (tmp_path / "r.csv").read_text().splitlines()[0]
        assert header == "clip_id,reverberant,si_sdr,noisy_si_sdr,spectral_mse,stoi"
        back = EvalReport.read_csv(tmp_path / "r.csv")
        assert [r.clip_id for r in back.rows] == [r.clip_id for r in rep.rows]
        assert back.rows[0].si_sdr == pytest.approx(rep.rows[0].si_sdr, abs=1e-6)
        assert back.rows[0].extra == {"stoi": 0.9}
        rep.write_json(tmp_path / "r.json", {"seed": 5})
        doc = json.loads((tmp_path / "r.json").read_text())
        assert doc["header"]["seed"] == 5
        assert doc["aggregate"]["all"]["clips"] == len(mixtures)
