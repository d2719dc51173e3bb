"""Impaired channel and heterodyne receiver front end, plus shot-noise calibration.

All noise is expressed in shot-noise units (SNU, vacuum variance 1 per
quadrature) before the ADC gain is applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidConfig
from .frame_builder import FrameLayout, cyclic_extend, transmit_frame
from .seeding import derive_seed
from .signal_core import ComplexSeries, matched_filter, phase_ramp, resample

# independent random streams inside one apply_channel call
_STREAM_PHASE, _STREAM_DETECTION, _STREAM_EXCESS = 1, 2, 3

CALIBRATION_SAMPLES = 1_000_000


def fiber_transmittance(length_km: float, loss_db_per_km: float = 0.2) -> float:
    return 10 ** (-loss_db_per_km * length_km / 10)


@dataclass(frozen=True)
class ChannelConfig:
    delay: float = 101.4e-6  # s
    skew: float = 1.0  # receiver clock / transmitter clock
    lo_offset: float = 280e6  # Hz
    linewidth_sum: float = 200.0  # Hz, transmitter + LO lasers
    transmittance: float = fiber_transmittance(20.0)
    efficiency: float = 0.69
    electronic_noise: float = 0.1  # SNU per quadrature
    adc_rate: float = 1e9
    seed: int = 0
    excess_noise: float = 0.0  # PNU, thermal photons at the channel output
    adc_gain: float = 1.0  # raw ADC units per sqrt(SNU)
    detection_noise: bool = True  # False only in noiseless test runs

    def __post_init__(self):
        if not 0 < self.transmittance <= 1:
            raise InvalidConfig(f"transmittance must be in (0, 1], got {self.transmittance}")
        if not 0 < self.efficiency <= 1:
            raise InvalidConfig(f"efficiency must be in (0, 1], got {self.efficiency}")
        if self.linewidth_sum < 0:
            raise InvalidConfig("linewidth_sum must be >= 0")
        if self.electronic_noise < 0:
            raise InvalidConfig("electronic_noise must be >= 0")
        if self.excess_noise < 0:
            raise InvalidConfig("excess_noise must be >= 0")
        if not 0.999 <= self.skew <= 1.001:
            raise InvalidConfig(f"skew must be in [0.999, 1.001], got {self.skew}")
        if self.delay < 0:
            raise InvalidConfig("delay must be >= 0")
        if not self.adc_rate > 0 or not self.adc_gain > 0:
            raise InvalidConfig("adc_rate and adc_gain must be positive")
        if abs(self.lo_offset) >= self.adc_rate / 2:
            raise InvalidConfig("lo_offset must be below the ADC Nyquist frequency")

    @property
    def total_transmittance(self) -> float:
        return self.transmittance * self.efficiency


@dataclass(frozen=True)
class CalibrationRecord:
    electronic_variance: float  # raw units^2 per quadrature
    shot_plus_electronic_variance: float  # raw units^2 per quadrature
    modulation_variance: float  # SNU per quadrature

    @property
    def shot_noise(self) -> float:
        """One SNU expressed in raw units^2."""
        return self.shot_plus_electronic_variance - self.electronic_variance

    @property
    def electronic_noise_snu(self) -> float:
        return self.electronic_variance / self.shot_noise


def wiener_phase(n: int, linewidth: float, rate: float, seed: int) -> np.ndarray:
    """Laser phase random walk with increment variance 2 pi linewidth / rate."""
    rng = np.random.default_rng(seed)
    start = rng.uniform(0.0, 2 * np.pi)
    if linewidth == 0 or n == 1:
        return np.full(n, start)
    steps = rng.normal(0.0, math.sqrt(2 * np.pi * linewidth / rate), n - 1)
    return start + np.concatenate([[0.0], np.cumsum(steps)])


def _complex_noise(rng: np.random.Generator, n: int, var_per_quadrature: float) -> np.ndarray:
    noise = rng.normal(0.0, math.sqrt(var_per_quadrature), size=(2, n))
    return noise[0] + 1j * noise[1]


def _occupied_center(x: np.ndarray, rate: float) -> float:
    spec = np.abs(np.fft.fft(x)) ** 2
    freqs = np.fft.fftfreq(x.size, d=1.0 / rate)
    total = np.sum(spec)
    return float(np.sum(freqs * spec) / total) if total > 0 else 0.0


def apply_channel(x: ComplexSeries, cfg: ChannelConfig, return_phase: bool = False):
    """Propagate a transmitter waveform and return the sampled receiver output.

    Order: delay (zero-signal samples prepended), loss sqrt(T eta), channel
    excess noise, beat with the free-running LO (offset + Wiener phase),
    receiver-clock resampling by ``skew`` relabelled to the nominal ADC rate,
    then vacuum + electronic noise and ADC gain.  With ``return_phase`` the
    true LO phase path on the transmitter grid is returned too.
    """
    if abs(x.sample_rate - cfg.adc_rate) > 1e-6 * cfg.adc_rate:
        raise InvalidConfig("waveform must be sampled at the nominal ADC rate")
    fs = x.sample_rate
    n_delay = int(round(cfg.delay * fs))
    sig = np.concatenate([np.zeros(n_delay, dtype=np.complex128), x.samples])
    sig = sig * math.sqrt(cfg.total_transmittance)

    if cfg.excess_noise > 0:
        rng = np.random.default_rng(derive_seed(cfg.seed, _STREAM_EXCESS))
        # thermal photons at the channel output, seen through eta and the heterodyne split
        sig = sig + _complex_noise(rng, sig.size, cfg.efficiency * cfg.excess_noise)

    phase = wiener_phase(sig.size, cfg.linewidth_sum, fs, derive_seed(cfg.seed, _STREAM_PHASE))
    sig = sig * phase_ramp(sig.size, cfg.lo_offset / fs) * np.exp(1j * phase)

    out = ComplexSeries(sig, fs)
    if cfg.skew != 1.0:
        out = resample(out, cfg.skew, center=_occupied_center(sig, fs))
    out = out.relabel(cfg.adc_rate)

    samples = out.samples
    if cfg.detection_noise:
        rng = np.random.default_rng(derive_seed(cfg.seed, _STREAM_DETECTION))
        samples = samples + _complex_noise(rng, samples.size, 1.0 + cfg.electronic_noise)
    result = ComplexSeries(samples * cfg.adc_gain, cfg.adc_rate)
    if return_phase:
        return result, phase
    return result


def _per_quadrature_variance(z: np.ndarray) -> float:
    z = z - z.mean()
    return float(np.mean(z.real**2 + z.imag**2) / 2)


def run_calibration(cfg: ChannelConfig, layout: FrameLayout, seed: int, nbar: float = 1.45) -> CalibrationRecord:
    """Three-step calibration: lasers off, LO only, then a back-to-back frame.

    The back-to-back step connects transmitter and receiver directly
    (T = 1, the configured detector efficiency, no fibre delay or clock skew)
    and estimates V_mod from the gain between Alice's symbols and Bob's
    matched-filter outputs.
    """
    g = cfg.adc_gain
    n = CALIBRATION_SAMPLES
    if not cfg.detection_noise:
        electronic, shot_plus = 0.0, g**2
    else:
        rng = np.random.default_rng(derive_seed(seed, 1))
        electronic = _per_quadrature_variance(g * _complex_noise(rng, n, cfg.electronic_noise))
        rng = np.random.default_rng(derive_seed(seed, 2))
        shot_plus = _per_quadrature_variance(g * _complex_noise(rng, n, 1.0 + cfg.electronic_noise))
        if cfg.electronic_noise == 0:
            electronic = 0.0

    b2b = replace(
        cfg, delay=0.0, skew=1.0, lo_offset=0.0, linewidth_sum=0.0, transmittance=1.0, excess_noise=0.0
    )
    rrc = layout.rrc()
    sps = layout.sps
    unit = math.sqrt(shot_plus - electronic)
    num = 0.0
    alice_power = 0.0
    n_sym = 0
    used = 0
    k = 0
    while used < n:
        tx = transmit_frame(layout, k, nbar, derive_seed(seed, 3, k))
        guard = rrc.taps.size
        rx = apply_channel(cyclic_extend(tx.waveform, guard, guard), replace(b2b, seed=derive_seed(seed, 4, k)))
        base = rx.samples / unit
        base = base * np.conj(phase_ramp(base.size, layout.f_quantum / layout.dac_rate))
        mf = matched_filter(base, rrc)
        bob = mf[guard::sps][layout.n_reference : layout.n_symbols]
        alice = tx.quantum.values
        # carrier phases are random per frame; project on the best rotation
        num += abs(np.vdot(alice, bob))
        alice_power += float(np.sum(np.abs(alice) ** 2))
        n_sym += alice.size
        used += layout.n_samples
        k += 1
    gain = num / alice_power
    mod_var = gain**2 * (alice_power / n_sym) / cfg.efficiency
    return CalibrationRecord(
        electronic_variance=electronic,
        shot_plus_electronic_variance=shot_plus,
        modulation_variance=float(mod_var),
    )
