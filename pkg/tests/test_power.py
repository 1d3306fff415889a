import math
import os

import numpy as np
import pytest

from edgemark.power import (
    AdcOutOfRangeError,
    ConversionMode,
    FrameIngestor,
    MalformedFrameError,
    PowerTrace,
    SensorConfig,
    TooFewSamplesError,
    WindowOutsideTraceError,
    adc_to_current,
    decode_frame,
    frames_to_trace,
    integrate_energy,
    make_sample,
    power_aggregates,
    read_frames,
    write_converted_csv,
    write_frames,
)

CFG = SensorConfig()


def constant_trace(power_w_target, duration_s, hz, adc=512):
    """Constant-power trace built through the real conversion path.

    With adc=512 the current is exactly 2.5 A, so supply = target / 2.5 makes
    the sample power land on (or within one ulp of) the target.
    """
    cfg = SensorConfig(supply_voltage=power_w_target / 2.5)
    step_ms = round(1000 / hz)
    n = int(duration_s * hz) + 1
    samples = tuple(make_sample(cfg, i * step_ms, float(i * step_ms), adc) for i in range(n))
    return PowerTrace(samples=samples, config=cfg)


# --- decode_frame ---


def test_decode_frame_parses_fields():
    assert decode_frame("12345,512", CFG) == (12345, 512)


def test_decode_frame_rejects_out_of_range_adc():
    with pytest.raises(AdcOutOfRangeError):
        decode_frame("12345,2048", CFG)


def test_decode_frame_rejects_garbage():
    with pytest.raises(MalformedFrameError):
        decode_frame("hello", CFG)
    with pytest.raises(MalformedFrameError):
        decode_frame("1,2,3", CFG)
    with pytest.raises(MalformedFrameError):
        decode_frame("1.5,10", CFG)


# --- adc_to_current ---


def test_adc_midpoint_is_exactly_2_5_amperes():
    assert adc_to_current(512, CFG) == 2.5


def test_adc_zero_gives_zero_current():
    assert adc_to_current(0, CFG) == 0.0


def test_calibrated_offset_cancels_at_midpoint():
    cfg = SensorConfig(mode=ConversionMode.CALIBRATED, offset_counts=512, sensitivity_v_per_a=0.185)
    assert adc_to_current(512, cfg) == 0.0


def test_conversion_linear_and_monotone_over_full_range():
    scale = CFG.v_ref / CFG.adc_resolution
    previous = -1.0
    for count in range(CFG.adc_resolution):
        value = adc_to_current(count, CFG)
        assert value == count * scale
        assert value > previous
        previous = value


def test_conversion_rejects_out_of_range():
    with pytest.raises(AdcOutOfRangeError):
        adc_to_current(1024, CFG)
    with pytest.raises(AdcOutOfRangeError):
        adc_to_current(-1, CFG)


def test_sensor_config_validation():
    with pytest.raises(ValueError):
        SensorConfig(adc_resolution=1000)
    with pytest.raises(ValueError):
        SensorConfig(v_ref=0)
    with pytest.raises(ValueError):
        SensorConfig(mode=ConversionMode.CALIBRATED)


# --- integrate_energy ---


def test_constant_power_energy_is_exact():
    trace = constant_trace(2.0, 10.0, hz=10)
    assert integrate_energy(trace, (0.0, 10000.0)) == 20.0


def test_linear_ramp_energy_is_triangle_area():
    cfg = SensorConfig(supply_voltage=2.048)
    samples = tuple(make_sample(cfg, i * 100, float(i * 100), i * 10) for i in range(101))
    trace = PowerTrace(samples=samples, config=cfg)
    energy = integrate_energy(trace, (0.0, 10000.0))
    assert energy == pytest.approx(50.0, rel=1e-9)


def test_sinusoid_energy_matches_closed_form_within_1pct():
    # P(t) = 2.5 V * supply * (0.5 + 0.45 sin) via adc; mean power * period oracle.
    cfg = SensorConfig(supply_voltage=4.0)
    period_ms = 10000
    counts = [round(512 + 460 * math.sin(2 * math.pi * t / period_ms)) for t in range(0, period_ms + 100, 100)]
    samples = tuple(make_sample(cfg, i * 100, float(i * 100), c) for i, c in enumerate(counts))
    trace = PowerTrace(samples=samples, config=cfg)
    mean_power = 512 * cfg.v_ref / cfg.adc_resolution * cfg.supply_voltage
    expected = mean_power * (period_ms / 1000.0)
    energy = integrate_energy(trace, (0.0, float(period_ms)))
    assert abs(energy - expected) / expected < 0.01


def test_energy_boundary_interpolation():
    trace = constant_trace(2.0, 10.0, hz=1)
    assert integrate_energy(trace, (250.0, 1750.0)) == pytest.approx(3.0, rel=1e-12)


def test_energy_additive_over_adjacent_windows():
    cfg = SensorConfig(supply_voltage=2.048)
    samples = tuple(make_sample(cfg, i * 137, float(i * 137), (7 * i) % 1024) for i in range(80))
    trace = PowerTrace(samples=samples, config=cfg)
    whole = integrate_energy(trace, (0.0, 137.0 * 79))
    split = integrate_energy(trace, (0.0, 4000.0)) + integrate_energy(trace, (4000.0, 137.0 * 79))
    assert whole == pytest.approx(split, rel=1e-12)
    assert whole >= 0.0


def test_energy_window_outside_trace():
    trace = constant_trace(2.0, 10.0, hz=10)
    with pytest.raises(WindowOutsideTraceError):
        integrate_energy(trace, (-5.0, 100.0))
    with pytest.raises(WindowOutsideTraceError):
        integrate_energy(trace, (0.0, 10001.0))


def test_energy_needs_two_samples():
    cfg = SensorConfig()
    trace = PowerTrace(samples=(make_sample(cfg, 0, 0.0, 512),), config=cfg)
    with pytest.raises(TooFewSamplesError):
        integrate_energy(trace, (0.0, 0.0))


# --- power_aggregates ---


def test_aggregates_constant_power_published_magnitudes():
    # 38,983 back-to-back 1.66 s windows of constant 74.9 W.
    n = 38983
    window_ms = 1660.0
    trace = constant_trace(74.9, duration_s=n * 1.66 + 2, hz=1)
    windows = [(i * window_ms, (i + 1) * window_ms) for i in range(n)]
    agg = power_aggregates(trace, windows)
    assert agg.power_per_inference_w == pytest.approx(74.9, rel=1e-9)
    assert agg.power_tot_kw == pytest.approx(74.9 * n / 1000.0, rel=1e-9)
    assert agg.power_tot_kw == pytest.approx(2919.80, rel=1e-3)
    assert agg.n_inferences == n


def test_aggregates_single_inference():
    trace = constant_trace(5.0, 10.0, hz=10)
    agg = power_aggregates(trace, [(0.0, 10000.0)])
    assert agg.power_per_inference_w == pytest.approx(5.0, rel=1e-12)
    assert agg.power_tot_kw == pytest.approx(0.005, rel=1e-12)


def test_aggregates_two_inferences_mean():
    cfg = SensorConfig(supply_voltage=0.8)  # adc 512 -> 2 W, adc 1023 -> ~4 W
    first = [make_sample(cfg, t, float(t), 512) for t in range(0, 1001, 100)]
    cfg4 = SensorConfig(supply_voltage=1.6)
    second = [make_sample(cfg4, t, float(t), 512) for t in range(1100, 2101, 100)]
    trace = PowerTrace(samples=tuple(first + second), config=cfg)
    agg = power_aggregates(trace, [(0.0, 1000.0), (1100.0, 2100.0)])
    assert agg.power_per_inference_w == pytest.approx(3.0, rel=1e-9)
    assert agg.power_tot_kw == pytest.approx(0.006, rel=1e-9)


def test_aggregates_subsample_windows_use_interpolation():
    trace = constant_trace(2.0, 10.0, hz=1)
    windows = [(100.0 * i + 10.0, 100.0 * i + 20.0) for i in range(5)]
    agg = power_aggregates(trace, windows)
    assert agg.power_per_inference_w == pytest.approx(2.0, rel=1e-12)


def test_aggregates_consistency_relation():
    n = 500
    trace = constant_trace(10.0, duration_s=n * 0.5 + 1, hz=4)
    windows = [(i * 500.0, (i + 1) * 500.0) for i in range(n)]
    agg = power_aggregates(trace, windows)
    implied_n = agg.power_tot_kw * 1000.0 / agg.power_per_inference_w
    assert implied_n == pytest.approx(n, rel=0.02)


def test_aggregates_rejects_overlapping_windows():
    trace = constant_trace(2.0, 10.0, hz=10)
    with pytest.raises(ValueError):
        power_aggregates(trace, [(0.0, 500.0), (400.0, 900.0)])


def test_aggregates_mean_power_and_energy_over_phase():
    trace = constant_trace(2.0, 10.0, hz=10)
    agg = power_aggregates(trace, [(0.0, 1000.0)], phase_windows=[(0.0, 10000.0)])
    assert agg.mean_power_w == pytest.approx(2.0, rel=1e-12)
    assert agg.energy_tot_j == 20.0


# --- frames and traces ---


def test_frames_to_trace_maps_device_clock():
    frames = [(1000, 512), (1100, 512), (1200, 512)]
    trace = frames_to_trace(frames, CFG, capture_start_mono_ms=50000.0)
    assert [s.t_mono_ms for s in trace.samples] == [50000.0, 50100.0, 50200.0]
    assert trace.samples[0].power_w == 2.5 * CFG.supply_voltage


def test_frames_to_trace_rejects_regressing_timestamps():
    with pytest.raises(MalformedFrameError):
        frames_to_trace([(1000, 1), (900, 1)], CFG, 0.0)


def test_frames_file_roundtrip(tmp_path):
    frames = [(0, 10), (100, 20), (200, 30)]
    path = tmp_path / "frames.csv"
    write_frames(frames, path)
    assert read_frames(path, CFG) == frames


def test_write_converted_csv(tmp_path):
    path = tmp_path / "converted.csv"
    write_converted_csv([(0, 512)], CFG, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t_device_ms,adc_count,current_a,power_w"
    assert lines[1] == "0,512,2.5,12.5"


def test_frame_ingestor_collects_from_stream():
    read_fd, write_fd = os.pipe()
    ingestor = FrameIngestor(os.fdopen(read_fd, "rb", buffering=0), CFG).start()
    with os.fdopen(write_fd, "wb", buffering=0) as writer:
        writer.write(b"0,100\n50,200\nbad line\n100,300\n")
    frames = ingestor.stop()
    assert frames == [(0, 100), (50, 200), (100, 300)]
