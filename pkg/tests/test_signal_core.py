import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvqkd_sync.errors import InvalidParameter
from cvqkd_sync.signal_core import (
    ComplexSeries,
    correlate_delay,
    design_rrc,
    estimate_tone,
    frequency_shift,
    periodogram,
    phase_ramp,
    refine_tone,
    resample,
)

FS = 1e9


def tone(f, n, fs=FS, phase=0.0):
    t = np.arange(n) / fs
    return ComplexSeries(np.exp(1j * (2 * np.pi * f * t + phase)), fs)


def rrc_closed_form_t0(beta):
    # textbook RRC value at t = 0 (unnormalized, unit symbol period)
    return 1 - beta + 4 * beta / np.pi


# -- ComplexSeries -----------------------------------------------------------


def test_series_rejects_nonfinite_and_empty():
    with pytest.raises(InvalidParameter):
        ComplexSeries(np.array([1.0, np.nan]), FS)
    with pytest.raises(InvalidParameter):
        ComplexSeries(np.array([]), FS)
    with pytest.raises(InvalidParameter):
        ComplexSeries(np.ones(4), 0.0)


# -- RRC ---------------------------------------------------------------------


def test_rrc_symmetric_unit_energy():
    rrc = design_rrc(0.2, 20, 50)
    assert rrc.taps.size == 1001
    np.testing.assert_array_equal(rrc.taps, rrc.taps[::-1])
    assert np.sum(rrc.taps**2) == pytest.approx(1.0, abs=1e-12)


def test_rrc_center_tap_matches_closed_form():
    rrc = design_rrc(0.2, 20, 50)
    # undo the energy normalization with an independently computed scale
    t = np.arange(-500, 501) / 50
    b = 0.2
    with np.errstate(divide="ignore", invalid="ignore"):
        ref = (np.sin(np.pi * t * (1 - b)) + 4 * b * t * np.cos(np.pi * t * (1 + b))) / (
            np.pi * t * (1 - (4 * b * t) ** 2)
        )
    ref[500] = rrc_closed_form_t0(b)
    sing = np.isclose(np.abs(t), 1 / (4 * b))
    ref[sing] = (b / np.sqrt(2)) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
    scale = np.sqrt(np.sum(ref**2))
    assert rrc.taps[500] * scale == pytest.approx(rrc_closed_form_t0(b), rel=1e-12)
    np.testing.assert_allclose(rrc.taps * scale, ref, atol=1e-12)


def test_rrc_cascade_has_low_isi():
    rrc = design_rrc(0.2, 20, 50)
    rc = np.convolve(rrc.taps, rrc.taps)
    c = rc.size // 2
    isi = np.abs(rc[c + 50 * np.arange(1, 10)]) / rc[c]
    assert 20 * np.log10(isi.max()) <= -40


def test_rrc_rejects_zero_rolloff():
    with pytest.raises(InvalidParameter):
        design_rrc(0.0, 20, 50)


# -- frequency shift ----------------------------------------------------------


def test_shift_zero_is_identity():
    x = tone(25e6, 4096)
    np.testing.assert_array_equal(frequency_shift(x, 0.0).samples, x.samples)


def test_shift_moves_spectral_peak():
    x = tone(25e6, 100_000)
    f, _ = estimate_tone(frequency_shift(x, 95e6), (0, 499e6))
    assert f == pytest.approx(120e6, abs=1e3)


@settings(max_examples=25, deadline=None)
@given(st.floats(-4.9e8, 4.9e8), st.integers(1, 5000))
def test_shift_inverse_composition(f, n):
    rng = np.random.default_rng(n)
    x = ComplexSeries(rng.normal(size=n) + 1j * rng.normal(size=n), FS)
    back = frequency_shift(frequency_shift(x, f), -f)
    np.testing.assert_allclose(back.samples, x.samples, atol=1e-9)


def test_phase_ramp_matches_direct_exponential():
    n, f = 300_001, 0.123456789
    k = np.arange(n)
    direct = np.exp(2j * np.pi * np.mod(f * k, 1.0))
    np.testing.assert_allclose(phase_ramp(n, f), direct, atol=1e-9)
    np.testing.assert_allclose(phase_ramp(10, f, start=7), direct[7:17], atol=1e-12)


# -- resample ----------------------------------------------------------------


def test_resample_unit_ratio_is_identity():
    x = tone(25e6, 1000)
    np.testing.assert_array_equal(resample(x, 1.0).samples, x.samples)


def test_resample_length_contract():
    x = tone(1e6, 1000)
    assert len(resample(x, 2.0)) == 2000


def test_resample_skewed_tone_against_analytic():
    ratio = 1 + 2e-5
    n = 200_000
    x = tone(25e6, n)
    y = resample(x, ratio)
    # the same physical tone sampled on the denser grid
    m = np.arange(len(y))
    ref = np.exp(2j * np.pi * 25e6 * m / (FS * ratio))
    core = slice(64, len(y) - 64)
    nmse = np.mean(np.abs(y.samples[core] - ref[core]) ** 2) / np.mean(np.abs(ref[core]) ** 2)
    assert nmse < 1e-6
    # relabelled at the nominal clock, the tone reads 25 MHz / ratio
    f, _ = estimate_tone(y.relabel(FS), (0, 50e6))
    assert f == pytest.approx(25e6 / ratio, abs=2.0)


def test_resample_with_center_keeps_bandpass_tone():
    ratio = 1 - 1e-5
    x = tone(400e6, 100_000)
    y = resample(x, ratio, center=400e6)
    m = np.arange(len(y))
    ref = np.exp(2j * np.pi * 400e6 * m / (FS * ratio))
    core = slice(64, len(y) - 64)
    assert np.max(np.abs(y.samples[core] - ref[core])) < 1e-3


# -- tone estimation -----------------------------------------------------------


def test_tone_on_bin_is_exact():
    n = 100_000
    f0 = 1234 * FS / n
    f, p = estimate_tone(tone(f0, n), (0, 100e6))
    assert f == pytest.approx(f0, abs=1e-6 * FS / n)
    assert p == pytest.approx(1.0, rel=1e-6)


def _fine_grid_oracle(x, band, step):
    # brute-force DTFT of the same windowed data on a fine grid
    grid = np.arange(band[0], band[1], step)
    n = np.arange(len(x))
    w = np.exp(-0.5 * ((n - (len(x)) / 2) / (len(x) / 10)) ** 2)
    vals = [abs(np.sum(x.samples * w * np.exp(-2j * np.pi * g * n / x.sample_rate))) for g in grid]
    return grid[int(np.argmax(vals))]


@pytest.mark.parametrize("frac", [0.5, 0.25, 0.77])
def test_tone_off_grid_error_small(frac):
    n = 500_000
    bin_w = FS / n
    f0 = (60_000 + frac) * bin_w
    f, _ = estimate_tone(tone(f0, n), (100e6, 140e6))
    assert abs(f - f0) < 0.1 * bin_w
    # on a shorter record, the estimator sits on the fine-grid oracle's peak
    short = tone(f0, 20_000)
    step = FS / 20_000
    oracle = _fine_grid_oracle(short, (f0 - 3 * step, f0 + 3 * step), step / 200)
    f_short, _ = estimate_tone(short, (100e6, 140e6))
    assert abs(f_short - oracle) < 0.1 * step


def test_tone_in_white_noise_returns_some_peak():
    rng = np.random.default_rng(1)
    x = ComplexSeries(rng.normal(size=10_000) + 1j * rng.normal(size=10_000), FS)
    f, p = estimate_tone(x, (0, 400e6))
    assert 0 <= f <= 400e6 and p > 0


def test_periodogram_unit_tone_scaling():
    n = 65_536
    f, p = periodogram(tone(1024 * FS / n, n))
    assert p.max() == pytest.approx(1.0, rel=1e-9)


# -- correlation ---------------------------------------------------------------


def _qpsk(rng, n):
    return (rng.choice([-1, 1], n) + 1j * rng.choice([-1, 1], n)) / np.sqrt(2)


def test_correlate_embedded_template():
    rng = np.random.default_rng(3)
    tpl = _qpsk(rng, 256)
    x = np.zeros(5000, complex)
    x[1234 : 1234 + 256] = tpl
    lag, metric = correlate_delay(x, tpl)
    assert lag == 1234
    assert metric == pytest.approx(1.0, abs=1e-9)


def test_correlate_at_ten_percent_ser():
    # Es/N0 near 6.6 dB gives about 10 % QPSK symbol errors
    sigma = np.sqrt(10 ** (-6.6 / 10) / 2)
    hits, metrics = 0, []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        tpl = _qpsk(rng, 256)
        x = _qpsk(rng, 4000)
        x[777 : 777 + 256] = tpl
        x = x + sigma * (rng.normal(size=x.size) + 1j * rng.normal(size=x.size))
        lag, metric = correlate_delay(x, tpl)
        hits += lag == 777
        metrics.append(metric)
    assert hits == 100
    assert min(metrics) > 0.5


def test_correlate_absent_template_stays_below_threshold():
    # noise-floor peak distribution over 1000 random inputs, template of 256 symbols
    peaks = []
    for seed in range(1000):
        rng = np.random.default_rng(10_000 + seed)
        tpl = _qpsk(rng, 256)
        x = rng.normal(size=1500) + 1j * rng.normal(size=1500)
        peaks.append(correlate_delay(x, tpl)[1])
    assert max(peaks) < 0.4


# -- maximum-likelihood tone refinement -----------------------------------------------


def test_refine_tone_noise_free_off_grid():
    n = 500_000
    for f in (25e6 + 777.7, 120e6 + 1234.5, -3e6 - 0.3 * FS / n):
        coarse, _ = estimate_tone(tone(f, n), (f - 1e6, f + 1e6))
        assert abs(refine_tone(tone(f, n), coarse) - f) < 1e-3 * FS / n


def test_refine_tone_reaches_cramer_rao_bound():
    # single tone in white noise: var(f) >= 6 fs^2 / ((2 pi)^2 snr n (n^2 - 1))
    n, snr = 100_000, 10 ** (-1.0)
    crlb = FS / (2 * np.pi) * np.sqrt(6 / (snr * n * (n * n - 1)))
    f0 = 40e6 + 0.37 * FS / n
    errs = []
    for seed in range(200):
        rng = np.random.default_rng(seed)
        noise = np.sqrt(1 / (2 * snr)) * (rng.normal(size=n) + 1j * rng.normal(size=n))
        x = ComplexSeries(tone(f0, n, phase=seed).samples + noise, FS)
        coarse, _ = estimate_tone(x, (f0 - 1e6, f0 + 1e6))
        errs.append(refine_tone(x, coarse) - f0)
    errs = np.array(errs)
    assert abs(errs.mean()) < 3 * crlb / np.sqrt(errs.size)
    assert 0.8 * crlb < errs.std() < 1.3 * crlb
