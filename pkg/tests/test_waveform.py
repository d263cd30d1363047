import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfdna.waveform import (CAPTURE_MAGIC, CaptureFormatError, ComplexSignal, EmitterProfile, MinMaxStats,
                            apply_impairments, from_iqnl, make_fleet, minmax_denormalize, minmax_normalize,
                            read_capture, synthesize_preamble, to_iqnl, write_capture)


def identity_profile(**kw):
    base = dict(emitter_id=0, iq_gain_imbalance=1.0, iq_phase_imbalance_rad=0.0, dc_offset=0j,
                residual_cfo_hz=0.0, pa_cubic_coeff=0.0, seed=0)
    base.update(kw)
    return EmitterProfile(**base)


def test_complex_signal_rejects_bad_input():
    with pytest.raises(ValueError):
        ComplexSignal(np.array([], dtype=complex))
    with pytest.raises(ValueError):
        ComplexSignal(np.array([1, np.nan], dtype=complex))
    with pytest.raises(ValueError):
        ComplexSignal(np.ones(4, dtype=complex), sample_rate_hz=0)


def test_preamble_length_and_power():
    x = synthesize_preamble(20e6)
    assert len(x) == 320
    assert x.power() == pytest.approx(1.0, abs=1e-9)


def test_preamble_rejects_other_rates():
    with pytest.raises(ValueError):
        synthesize_preamble(40e6)


def test_sts_period_16():
    s = synthesize_preamble().samples[:160]
    lag0 = np.vdot(s, s).real
    lag16 = abs(np.vdot(s[:-16], s[16:])) * 160 / 144
    assert lag16 >= 0.999 * lag0


def test_spectrum_confined_to_used_subcarriers():
    # each 64-sample window of the STS (and the LTS after its guard) is one OFDM symbol
    s = synthesize_preamble().samples
    windows = [s[i:i + 64] for i in (0, 64)] + [s[192:256], s[256:320]]
    used_sts = {k % 64 for k in range(-24, 25, 4) if k != 0}
    used_lts = {k % 64 for k in range(-26, 27) if k != 0}
    for n, w in enumerate(windows):
        spec = np.abs(np.fft.fft(w)) ** 2
        used = used_sts if n < 2 else used_lts
        mask = np.array([k not in used for k in range(64)])
        assert 10 * np.log10(spec[mask].max() / spec.max() + 1e-300) <= -60


def test_identity_impairments_bit_exact():
    x = synthesize_preamble()
    y = apply_impairments(x, identity_profile())
    assert np.array_equal(y.samples, x.samples)


def test_dc_offset_shifts_mean():
    x = synthesize_preamble()
    y = apply_impairments(x, identity_profile(dc_offset=0.02 + 0j))
    assert abs((y.samples.mean() - x.samples.mean()) - 0.02) <= 1e-12


def test_cubic_on_constant_envelope():
    x = ComplexSignal(np.exp(1j * np.linspace(0, 6, 50)))
    y = apply_impairments(x, identity_profile(pa_cubic_coeff=-0.05))
    np.testing.assert_allclose(y.samples, 0.95 * x.samples, atol=1e-15)


def test_impairments_deterministic():
    x = synthesize_preamble()
    p = make_fleet(3, seed=7)[1]
    assert np.array_equal(apply_impairments(x, p).samples, apply_impairments(x, p).samples)


def test_fleet_ranges_and_unique_ids():
    fleet = make_fleet(32, seed=1)
    assert len({p.emitter_id for p in fleet}) == 32
    for p in fleet:
        assert 0.95 <= p.iq_gain_imbalance <= 1.05
        assert abs(p.iq_phase_imbalance_rad) <= math.radians(3)
        assert abs(p.dc_offset) <= 0.02
        assert abs(p.residual_cfo_hz) <= 300
        assert -0.05 <= p.pa_cubic_coeff <= 0


def test_profile_validation():
    with pytest.raises(ValueError):
        identity_profile(iq_gain_imbalance=2.0)
    with pytest.raises(ValueError):
        identity_profile(pa_cubic_coeff=-1.0)


@pytest.mark.parametrize("sample, column", [
    (1 + 0j, (1, 0, 0, 0)),
    (1j, (0, 1, 0, math.pi / 2)),
    (math.e + 0j, (math.e, 0, 1, 0)),
])
def test_iqnl_columns(sample, column):
    t = to_iqnl(ComplexSignal(np.array([sample])))
    np.testing.assert_allclose(t[:, 0], column, atol=1e-15)


def test_iqnl_phase_range_and_clamp():
    t = to_iqnl(np.array([complex(-1, -0.0), 0j]))
    assert t[3, 0] == pytest.approx(math.pi)
    assert t[2, 1] == pytest.approx(math.log(1e-12))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.complex_numbers(min_magnitude=1e-6, max_magnitude=1e3, allow_nan=False,
                                   allow_infinity=False), min_size=1, max_size=40))
def test_iqnl_inverse_property(values):
    s = np.array(values)
    t = to_iqnl(s)
    np.testing.assert_allclose(from_iqnl(t), s, rtol=1e-9, atol=1e-9 * np.abs(s).max())
    assert np.all(t[3] > -math.pi) and np.all(t[3] <= math.pi)


def test_minmax_examples():
    st_ = MinMaxStats([0.0], [10.0])
    np.testing.assert_allclose(minmax_normalize(np.array([[0.0, 5.0, 10.0]]), st_), [[0, 0.5, 1]])
    assert minmax_normalize(np.array([[12.0]]), st_)[0, 0] == 1.0
    unit = MinMaxStats([0.0], [1.0])
    row = np.array([[0.1, 0.7, 0.3]])
    np.testing.assert_array_equal(minmax_normalize(row, unit), row)


def test_minmax_degenerate_names_row():
    with pytest.raises(ValueError, match="row 1"):
        minmax_normalize(np.zeros((2, 3)), MinMaxStats([0.0, 2.0], [1.0, 2.0]))


def test_minmax_round_trip():
    rng = np.random.default_rng(0)
    t = rng.normal(size=(5, 4, 20))
    stats = MinMaxStats.fit(t)
    np.testing.assert_allclose(minmax_denormalize(minmax_normalize(t, stats), stats), t, atol=1e-12)
    assert MinMaxStats.from_dict(stats.to_dict()).lo.tolist() == stats.lo.tolist()


def test_capture_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    s = (rng.normal(size=320) + 1j * rng.normal(size=320)).astype(np.complex64).astype(complex)
    p = tmp_path / "cap.bin"
    write_capture(p, ComplexSignal(s), {"emitter_id": 7})
    got, meta = read_capture(p)
    assert np.array_equal(got.samples, s)
    assert meta["emitter_id"] == 7 and meta["sample_rate_hz"] == 20e6 and meta["n_samples"] == 320


def test_capture_payload_size(tmp_path):
    p = tmp_path / "pre.bin"
    write_capture(p, synthesize_preamble(), {"emitter_id": 0})
    header = struct.calcsize("<8sIdI")
    assert p.stat().st_size - header == 2560
    assert p.read_bytes()[:8] == CAPTURE_MAGIC


def test_capture_errors(tmp_path):
    p = tmp_path / "c.bin"
    p.write_bytes(struct.pack("<8sIdI", CAPTURE_MAGIC, 320, 20e6, 0))
    with pytest.raises(CaptureFormatError, match="truncated payload"):
        read_capture(p)
    p.write_bytes(b"RFDNA1")
    with pytest.raises(CaptureFormatError, match="malformed header"):
        read_capture(p)
    p.write_bytes(struct.pack("<8sIdI", b"BADMAGIC", 1, 20e6, 0) + b"\0" * 8)
    with pytest.raises(CaptureFormatError, match="malformed header"):
        read_capture(p)
    p.write_bytes(struct.pack("<8sIdI", CAPTURE_MAGIC, 1, 20e6, 0) + b"\0" * 16)
    with pytest.raises(CaptureFormatError, match="length mismatch"):
        read_capture(p)
