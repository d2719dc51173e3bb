"""Sample-level DSP primitives shared by the transmitter, channel and receiver."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sfft
from scipy import signal as ssig
from scipy.optimize import minimize_scalar

from .errors import BandEmpty, InvalidParameter

# resampler kernel
RESAMPLE_TAPS = 32
RESAMPLE_BETA = 8.0
_RESAMPLE_PHASES = 4096
_RESAMPLE_CHUNK = 1 << 14

# estimate_tone periodogram: Gaussian window with std N / _TONE_WINDOW_DIV
_TONE_WINDOW_DIV = 10.0


@dataclass(frozen=True)
class ComplexSeries:
    """Uniformly sampled complex baseband waveform."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size < 1:
            raise InvalidParameter("ComplexSeries needs a non-empty 1-D sample array")
        if not self.sample_rate > 0:
            raise InvalidParameter(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise InvalidParameter("ComplexSeries samples must be finite")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def time(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate

    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))

    def with_samples(self, samples) -> "ComplexSeries":
        return ComplexSeries(samples, self.sample_rate)

    def relabel(self, sample_rate: float) -> "ComplexSeries":
        """Same samples, reinterpreted at a different (nominal) clock."""
        return ComplexSeries(self.samples, sample_rate)


@dataclass(frozen=True)
class RrcFilter:
    rolloff: float
    span: int
    samples_per_symbol: int
    taps: np.ndarray

    @property
    def delay(self) -> int:
        """Index of the centre tap."""
        return (self.taps.size - 1) // 2


def _rrc_value(t: np.ndarray, beta: float) -> np.ndarray:
    """Closed-form RRC impulse response, t in symbol periods, singular points handled."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    at_zero = np.isclose(t, 0.0, atol=1e-12)
    at_sing = np.isclose(np.abs(t), 1.0 / (4.0 * beta), atol=1e-12)
    regular = ~(at_zero | at_sing)
    tr = t[regular]
    num = np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
    den = np.pi * tr * (1 - (4 * beta * tr) ** 2)
    out[regular] = num / den
    out[at_zero] = 1.0 - beta + 4.0 * beta / np.pi
    out[at_sing] = (beta / np.sqrt(2.0)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
    )
    return out


def design_rrc(rolloff: float, span: int = 20, sps: int = 50) -> RrcFilter:
    """Energy-normalized root-raised-cosine taps, ``span * sps + 1`` long."""
    if not 0.0 < rolloff <= 1.0:
        raise InvalidParameter(f"rolloff must be in (0, 1], got {rolloff}")
    if int(span) != span or span < 4:
        raise InvalidParameter(f"span must be an integer >= 4, got {span}")
    if int(sps) != sps or sps < 2:
        raise InvalidParameter(f"sps must be an integer >= 2, got {sps}")
    span, sps = int(span), int(sps)
    half = span * sps // 2
    # evaluate one side and mirror so the taps are exactly symmetric
    right = _rrc_value(np.arange(half + 1) / sps, rolloff)
    taps = np.concatenate([right[:0:-1], right])
    taps /= np.sqrt(np.sum(taps**2))
    return RrcFilter(rolloff=rolloff, span=span, samples_per_symbol=sps, taps=taps)


def matched_filter(x: np.ndarray, rrc: RrcFilter) -> np.ndarray:
    """Centre-aligned convolution: output[n] is the filter response centred on x[n]."""
    full = ssig.oaconvolve(x, rrc.taps)
    return full[rrc.delay : rrc.delay + x.size]


_RAMP_BLOCK = 1024


def phase_ramp(n: int, f_norm: float, start: int = 0) -> np.ndarray:
    """exp(j 2 pi f_norm k) for k = start .. start + n - 1.

    Computed as an outer product of a coarse and a fine ramp, which avoids a
    full-length complex exponential; phases are reduced modulo one cycle
    before exponentiating, so long records keep full precision.
    """
    blocks = -(-n // _RAMP_BLOCK)
    coarse = np.mod(f_norm * (start + _RAMP_BLOCK * np.arange(blocks, dtype=np.float64)), 1.0)
    fine = np.mod(f_norm * np.arange(_RAMP_BLOCK, dtype=np.float64), 1.0)
    ramp = np.multiply.outer(np.exp(2j * np.pi * coarse), np.exp(2j * np.pi * fine))
    return ramp.ravel()[:n]


def frequency_shift(x: ComplexSeries, f: float) -> ComplexSeries:
    """Multiply by exp(j 2 pi f n / fs)."""
    if abs(f) >= x.sample_rate / 2:
        raise InvalidParameter(f"shift {f} Hz is not below Nyquist ({x.sample_rate / 2} Hz)")
    if f == 0:
        return x.with_samples(x.samples.copy())
    return x.with_samples(x.samples * phase_ramp(len(x), f / x.sample_rate))


@lru_cache(maxsize=4)
def _resample_table(cutoff: float) -> np.ndarray:
    """Kaiser-windowed sinc kernels, one row per fractional offset in [0, 1]."""
    half = RESAMPLE_TAPS // 2
    mu = np.arange(_RESAMPLE_PHASES + 1) / _RESAMPLE_PHASES
    k = np.arange(-half + 1, half + 1)
    d = k[None, :] - mu[:, None]
    window = np.i0(RESAMPLE_BETA * np.sqrt(np.clip(1.0 - (d / half) ** 2, 0.0, None))) / np.i0(RESAMPLE_BETA)
    kern = cutoff * np.sinc(cutoff * d) * window
    kern /= kern.sum(axis=1, keepdims=True)
    return kern


def _resample_core(x: np.ndarray, ratio: float) -> np.ndarray:
    half = RESAMPLE_TAPS // 2
    n_out = int(math.floor(x.size * ratio))
    table = _resample_table(min(1.0, ratio))
    padded = np.concatenate([np.zeros(half), x, np.zeros(half + 1)])
    # real and imaginary parts separately: real-valued einsum is much faster
    win_re = sliding_window_view(padded.real, RESAMPLE_TAPS)
    win_im = sliding_window_view(padded.imag, RESAMPLE_TAPS)
    out = np.empty(n_out, dtype=np.complex128)
    for lo in range(0, n_out, _RESAMPLE_CHUNK):
        m = np.arange(lo, min(lo + _RESAMPLE_CHUNK, n_out))
        pos = m / ratio
        base = np.floor(pos).astype(np.int64)
        kern = table[np.rint((pos - base) * _RESAMPLE_PHASES).astype(np.int64)]
        rows = base + 1  # window starting at tap offset -half + 1
        out.real[m] = np.einsum("ij,ij->i", win_re[rows], kern)
        out.imag[m] = np.einsum("ij,ij->i", win_im[rows], kern)
    return out


def resample(x: ComplexSeries, ratio: float, center: float = 0.0) -> ComplexSeries:
    """Band-limited interpolation onto a grid ``ratio`` times denser.

    The output is labelled with ``sample_rate * ratio``, so physical frequencies
    are preserved.  ``center`` (Hz) is the middle of the occupied band; the
    kernel is applied around it, which keeps narrow band-pass signals far from
    the kernel's transition band.  The first and last ``RESAMPLE_TAPS // 2``
    output samples see a truncated kernel.
    """
    if not 0.5 <= ratio <= 2.0:
        raise InvalidParameter(f"resample ratio must be in [0.5, 2], got {ratio}")
    if ratio == 1.0:
        return x.with_samples(x.samples.copy())
    data = x.samples
    if center != 0.0:
        data = data * np.conj(phase_ramp(data.size, center / x.sample_rate))
    out = _resample_core(data, ratio)
    new_rate = x.sample_rate * ratio
    if center != 0.0:
        out *= phase_ramp(out.size, center / new_rate)
    return ComplexSeries(out, new_rate)


def gaussian_window(n: int, div: float = _TONE_WINDOW_DIV) -> np.ndarray:
    return ssig.windows.gaussian(n, std=n / div, sym=False)


def periodogram(x: ComplexSeries, window: np.ndarray | None = None, nfft: int | None = None):
    """Windowed periodogram on an fftshift-ed frequency axis.

    Power is scaled so that a unit-amplitude complex tone on a bin centre
    reads 1.0.
    """
    if window is None:
        window = gaussian_window(len(x))
    if nfft is None:
        nfft = sfft.next_fast_len(len(x))
    spec = sfft.fft(x.samples * window, n=nfft)
    power = np.abs(spec) ** 2 / np.sum(window) ** 2
    freqs = sfft.fftfreq(nfft, d=1.0 / x.sample_rate)
    return sfft.fftshift(freqs), sfft.fftshift(power)


def _refine_peak(power: np.ndarray, k: int) -> tuple[float, float]:
    """Three-point parabola through log-power around bin k: (offset in bins, peak power)."""
    n = power.size
    tiny = np.finfo(float).tiny
    y0, y1, y2 = (np.log(max(power[(k + d) % n], tiny)) for d in (-1, 0, 1))
    denom = y0 - 2 * y1 + y2
    if denom >= 0:
        return 0.0, float(power[k])
    delta = 0.5 * (y0 - y2) / denom
    delta = float(np.clip(delta, -0.5, 0.5))
    peak = y1 - 0.25 * (y0 - y2) * delta
    return delta, float(np.exp(peak))


def estimate_tone(x: ComplexSeries, band: tuple[float, float], spectrum=None) -> tuple[float, float]:
    """Frequency and power of the strongest periodogram peak inside ``band``.

    ``spectrum`` may carry a precomputed ``periodogram(x)`` result so several
    tones can be read from one transform.  White noise always yields *some*
    peak; thresholding on power is the caller's job.
    """
    lo, hi = sorted(band)
    nyq = x.sample_rate / 2
    if lo < -nyq or hi > nyq:
        raise InvalidParameter(f"band {band} outside (-{nyq}, {nyq})")
    if len(x) < 1024:
        raise InvalidParameter("estimate_tone needs at least 1024 samples")
    freqs, power = spectrum if spectrum is not None else periodogram(x)
    inside = np.flatnonzero((freqs >= lo) & (freqs <= hi))
    if inside.size == 0:
        raise BandEmpty(f"no periodogram bin inside {band}")
    k = int(inside[np.argmax(power[inside])])
    delta, peak = _refine_peak(power, k)
    df = freqs[1] - freqs[0]
    return float(freqs[k] + delta * df), peak


def refine_tone(x: ComplexSeries, f_coarse: float, block: int = 100) -> float:
    """Maximum-likelihood frequency of a single tone near ``f_coarse``.

    Maximizes the rectangular-window DTFT magnitude within one bin of the
    coarse estimate.  The record is mixed down and block-averaged first, so
    each objective evaluation is cheap; the tone offset (under a bin) is far
    inside the block filter's passband.
    """
    n = len(x) // block * block
    if n < 1024:
        raise InvalidParameter("refine_tone needs at least 1024 samples")
    fs = x.sample_rate
    y = x.samples[:n] * np.exp(-2j * np.pi * (f_coarse / fs) * np.arange(n))
    z = y.reshape(-1, block).mean(axis=1)
    m = np.arange(z.size)
    bin_width = fs / n

    def neg_power(offset):
        return -abs(np.dot(z, np.exp(-2j * np.pi * (offset * block / fs) * m)))

    res = minimize_scalar(neg_power, bounds=(-bin_width, bin_width), method="bounded", options={"xatol": 1e-5 * bin_width})
    return float(f_coarse + res.x)


def bandpass_fft(x: ComplexSeries, f_center: float, half_width: float) -> ComplexSeries:
    """Brick-wall band-pass by zeroing FFT bins outside f_center +- half_width."""
    n = sfft.next_fast_len(len(x))  # zero padding: fast length, and the wrap-around lands in the pad
    spec = sfft.fft(x.samples, n=n)
    freqs = sfft.fftfreq(n, d=1.0 / x.sample_rate)
    spec[np.abs(freqs - f_center) > half_width] = 0.0
    return x.with_samples(sfft.ifft(spec)[: len(x)])


def correlate_delay(x: np.ndarray, template: np.ndarray) -> tuple[int, float]:
    """Lag maximizing the normalized cross-correlation magnitude.

    peak_metric = |sum conj(t) x[lag:lag+L]| / (||t|| ||x[lag:lag+L]||), in [0, 1].
    """
    x = np.asarray(x, dtype=np.complex128)
    template = np.asarray(template, dtype=np.complex128)
    n_t = template.size
    if n_t < 64:
        raise InvalidParameter("template must hold at least 64 symbols")
    if x.size < n_t:
        raise InvalidParameter("x is shorter than the template")
    corr = ssig.correlate(x, template, mode="valid", method="fft")
    energy = np.concatenate([[0.0], np.cumsum(np.abs(x) ** 2)])
    window_energy = energy[n_t:] - energy[:-n_t]
    denom = np.sqrt(np.clip(window_energy, 0.0, None)) * np.linalg.norm(template)
    metric = np.zeros(corr.size)
    ok = denom > 0
    metric[ok] = np.abs(corr[ok]) / denom[ok]
    lag = int(np.argmax(metric))
    return lag, float(min(metric[lag], 1.0))
