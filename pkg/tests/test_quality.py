import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from enhabr import quality as q
from enhabr.errors import ConfigError, OutOfRange, ValidationError

QM = q.QualityModel.default()
LADDER = q.LadderSpec()


def test_default_ladder():
    assert LADDER.bitrates == (512, 1024, 1600, 2640, 4400)
    assert LADDER.gop_frames == 120 == LADDER.chunk_duration * LADDER.fps


def test_ladder_validation():
    with pytest.raises(ValidationError):
        q.LadderSpec(rungs=(q.Rung(1024, "p360"), q.Rung(512, "p240")))
    with pytest.raises(ConfigError):
        q.LadderSpec(rungs=(q.Rung(512, "p999"),))


def test_resolution_aliases():
    assert q.resolution_key(240) == q.resolution_key("240p") == "p240"


def test_psnr_at_anchor_and_midpoint():
    for b, db in QM.base_psnr:
        if b > 0:
            assert q.psnr_at(QM, b) == db
    mid = (1024 + 1600) / 2
    assert q.psnr_at(QM, mid) == pytest.approx((32.6 + 34.3) / 2)


def test_sr_gains():
    assert q.psnr_at(QM, 512, q.SR, "p240") == pytest.approx(q.psnr_at(QM, 512) + 1.2)
    assert q.psnr_at(QM, 2640, q.SR, "p720") == pytest.approx(q.psnr_at(QM, 2640) + 1.3)
    assert QM.sr_gain["p1080"] == 0


def test_psnr_out_of_range():
    with pytest.raises(OutOfRange):
        q.psnr_at(QM, 5000)


def test_recovery_anchors_clamp():
    for count in (5, 10, 20, 50):
        rec = q.recovered_psnr(QM, count, q.RECOVERY)
        reuse = q.recovered_psnr(QM, count, q.REUSE)
        assert rec - reuse >= 10
    assert q.recovered_psnr(QM, 1000) == q.recovered_psnr(QM, 50)
    with pytest.raises(OutOfRange):
        q.recovered_psnr(QM, 0)


def test_effective_bitrate_examples():
    assert q.effective_bitrate(QM, q.psnr_at(QM, 2640)) == 2640
    assert q.effective_bitrate(QM, 45.0) == 4400
    with pytest.raises(OutOfRange):
        q.effective_bitrate(QM, 10.0)


def test_effective_bitrate_inverts_anchors():
    for b in LADDER.bitrates:
        assert abs(q.effective_bitrate(QM, q.psnr_at(QM, b)) - b) <= 1e-9


def test_sr_never_lowers_effective_bitrate():
    for r in LADDER.rungs[:-1]:
        assert q.effective_bitrate(QM, q.psnr_at(QM, r.bitrate, q.SR, r.resolution)) >= r.bitrate


@given(st.floats(0, 4400), st.floats(0, 4400))
def test_psnr_monotone(a, b):
    lo, hi = sorted((a, b))
    assert q.psnr_at(QM, lo) <= q.psnr_at(QM, hi)


@given(st.floats(16, 40), st.floats(16, 40))
def test_effective_monotone(a, b):
    lo, hi = sorted((a, b))
    assert q.effective_bitrate(QM, lo) <= q.effective_bitrate(QM, hi)


@given(st.integers(1, 200))
def test_recovery_dominates_reuse(depth):
    assert q.recovered_psnr(QM, depth, q.RECOVERY) >= q.recovered_psnr(QM, depth, q.REUSE)


def test_concealment_capped_at_base():
    assert q.concealed_psnr(QM, 1, q.RECOVERY, 512) == q.psnr_at(QM, 512)
    assert q.concealed_psnr(QM, 50, q.RECOVERY, 4400) == 27.0


def test_mean_run_psnr_is_average():
    expected = np.mean([q.concealed_psnr(QM, d, q.RECOVERY, 2640) for d in range(1, 31)])
    assert q.mean_run_psnr(QM, 30, q.RECOVERY, 2640) == pytest.approx(expected)


def test_expected_concealed_psnr_limits():
    # With rare losses every lost frame starts its own run.
    assert q.expected_concealed_psnr(QM, 0.0, q.REUSE, 2640, 120) == q.concealed_psnr(
        QM, 1, q.REUSE, 2640)
    lo = q.expected_concealed_psnr(QM, 0.9, q.REUSE, 2640, 120)
    assert lo < q.expected_concealed_psnr(QM, 0.1, q.REUSE, 2640, 120)


def test_model_validation():
    d = QM.to_dict()
    bad = dict(d, recovery_psnr=[[1, 20.0], [5, 25.0]])
    with pytest.raises(ValidationError):
        q.QualityModel.from_dict(bad)
    with pytest.raises(ValidationError):
        q.QualityModel.from_dict(dict(d, sr_gain={"1080": 0.5}))
    with pytest.raises(ConfigError):
        q.QualityModel.from_dict(dict(d, extra=1))


def test_model_json_roundtrip(tmp_path):
    p = tmp_path / "qm.json"
    p.write_text(json.dumps(QM.to_dict()))
    back = q.QualityModel.load(p)
    np.testing.assert_array_equal(back.base_psnr, QM.base_psnr)
    assert back.sr_gain == QM.sr_gain


def test_enhancement_cost_defaults():
    c = q.EnhancementCost()
    assert c.t_sr == c.t_rc == 0.022
    assert c.decode_for("1080") == 0.0062
    assert q.EnhancementCost(include_decode=False).decode_for("p240") == 0.0
    with pytest.raises(ValidationError):
        q.EnhancementCost(t_sr=0)
