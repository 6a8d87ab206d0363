import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enhabr.errors import DegenerateTrace, NotInitialized, ParseError, ValidationError
from enhabr.quality import LadderSpec
from enhabr.synthetic import PROFILES, synthetic_suite, synthetic_trace
from enhabr.traces import (EWMA, HOLT_WINTERS, NetworkTrace, PredictorState, TraceSample,
                           bundled_trace, downscale_trace, load_trace, predict_next, save_trace,
                           with_loss)


def _trace(values, loss=0.0):
    return NetworkTrace("t", "synthetic", [TraceSample(float(i), float(v), loss)
                                            for i, v in enumerate(values)])


def test_two_row_csv(tmp_path):
    p = tmp_path / "two.csv"
    p.write_text("timestamp_s,throughput_kbps,loss_rate\n0,5000,0.01\n1,6000,0.02\n")
    t = load_trace(p)
    assert len(t.samples) == 2
    assert t.duration == 1.0
    assert t.id == "two"


def test_headerless_csv(tmp_path):
    p = tmp_path / "bare.csv"
    p.write_text("0,5000,0.01\n1,6000,0.02")
    assert load_trace(p).mean_throughput == 5500


def test_backwards_timestamp(tmp_path):
    p = tmp_path / "back.csv"
    p.write_text("timestamp_s,throughput_kbps,loss_rate\n0,1,0\n2,1,0\n1,1,0\n")
    with pytest.raises(ValidationError):
        load_trace(p)


def test_malformed_row_reports_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("timestamp_s,throughput_kbps,loss_rate\n0,1,0\n1,abc,0\n")
    with pytest.raises(ParseError, match="line 3"):
        load_trace(p)


def test_invariants():
    with pytest.raises(ValidationError):
        _trace([1.0])
    with pytest.raises(ValidationError):
        _trace([1.0, -1.0])
    with pytest.raises(ValidationError):
        _trace([1.0, 1.0], loss=1.5)


def test_bundled_fixture_statistics():
    t = bundled_trace()
    assert t.network_kind == "threeG"
    assert t.mean_throughput == pytest.approx(7500, rel=1e-9)
    assert t.mean_loss == pytest.approx(0.009, rel=1e-9)


@pytest.mark.parametrize("suffix", ["csv", "json"])
def test_save_load_roundtrip(tmp_path, suffix):
    t = synthetic_trace("fourG", 3, duration=20)
    p = tmp_path / f"x.{suffix}"
    save_trace(t, p)
    back = load_trace(p)
    assert back == t


def test_json_field_names(tmp_path):
    p = tmp_path / "x.json"
    save_trace(_trace([1, 2, 3]), p)
    doc = json.loads(p.read_text())
    assert set(doc["samples"][0]) == {"timestamp_s", "throughput_kbps", "loss_rate"}


def test_downscale_to_target():
    t = _trace(np.linspace(20_000, 52_800, 11))  # mean 36,400
    assert t.mean_throughput == pytest.approx(36_400)
    d = downscale_trace(t, LadderSpec(), 1500)
    assert d.mean_throughput == pytest.approx(1500, rel=1e-9)
    assert d.throughput[3] / t.throughput[3] == pytest.approx(1500 / 36_400, rel=1e-12)


def test_downscale_identity_and_auto():
    t = _trace([1000, 2000, 3000])
    assert downscale_trace(t, LadderSpec(), 2000) is t
    auto = downscale_trace(t, LadderSpec())
    assert 512 <= auto.mean_throughput <= 4400
    assert auto.mean_throughput == pytest.approx((512 + 4400) / 2)


def test_downscale_degenerate():
    with pytest.raises(DegenerateTrace):
        downscale_trace(_trace([0, 0, 0]), LadderSpec())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1, 1e6), min_size=2, max_size=30), st.floats(100, 10_000))
def test_downscale_preserves_ratios_and_loss(values, target):
    t = NetworkTrace("t", "synthetic", [TraceSample(float(i), v, (i % 7) / 10)
                                        for i, v in enumerate(values)])
    d = downscale_trace(t, LadderSpec(), target)
    np.testing.assert_array_equal(d.loss, t.loss)
    ratios = d.throughput / t.throughput
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)


def test_ewma_examples():
    s = PredictorState(kind=EWMA, ewma_alpha=0.5)
    preds = []
    for x in (4, 4, 4):
        s, p = predict_next(s, x)
        preds.append(p)
    assert preds == [4, 4, 4]
    s = PredictorState(kind=EWMA, ewma_alpha=0.5)
    s, _ = predict_next(s, 2)
    s, p = predict_next(s, 4)
    assert p == 3.0


def test_holt_winters_follows_ramp():
    s = PredictorState(kind=HOLT_WINTERS)
    for x in (1, 2, 3, 4):
        s, p = predict_next(s, x)
    assert p >= 4


def test_prediction_before_observation():
    with pytest.raises(NotInitialized):
        PredictorState().prediction


def test_bad_observation():
    with pytest.raises(ValidationError):
        predict_next(PredictorState(), float("nan"))
    with pytest.raises(ValidationError):
        predict_next(PredictorState(), -1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1e5), min_size=1, max_size=40), st.floats(0.01, 1.0))
def test_ewma_bounded_by_observations(xs, alpha):
    s = PredictorState(kind=EWMA, ewma_alpha=alpha)
    seen = []
    for x in xs:
        s, p = predict_next(s, x)
        seen.append(x)
        assert min(seen) - 1e-9 <= p <= max(seen) + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 1e5), min_size=1, max_size=20),
       st.sampled_from([EWMA, HOLT_WINTERS]))
def test_predictor_replay_is_identical(xs, kind):
    def run():
        s, out = PredictorState(kind=kind), []
        for x in xs:
            s, p = predict_next(s, x)
            out.append(p)
        return out
    assert run() == run()


def test_synthetic_profiles():
    for kind, prof in PROFILES.items():
        t = synthetic_trace(kind, 1)
        assert t.network_kind == kind
        assert t.mean_throughput == pytest.approx(prof.mean_kbps, rel=1e-9)
        assert t.mean_loss == pytest.approx(prof.mean_loss, rel=1e-9)
    assert synthetic_trace("wifi", 5) == synthetic_trace("wifi", 5)


def test_suite_layout():
    suite = synthetic_suite()
    assert len(suite) == 12
    assert {t.network_kind for t in suite} == {"threeG", "fourG", "fiveG", "wifi"}
    for t in suite:
        assert t.mean_throughput == pytest.approx(2456, rel=1e-9)


def test_with_loss():
    t = with_loss(_trace([1, 2]), 0.05)
    assert list(t.loss) == [0.05, 0.05]
