"""Receiver DSP chain: from the sampled heterodyne record to aligned symbols.

Blocks, in order: pilot estimation, clock-skew correction, UKF phase tracking
on pilot 1, phase compensation, QPSK downconversion with optimum-sample
selection and matched filtering, M-th power residual phase removal, header
correlation, quantum-symbol extraction and CAZAC bulk-phase correction.

Sample indices in :class:`SyncState` refer to the record *after* skew
correction (identical to the raw record when the correction is off).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy.ndimage import uniform_filter1d

from .errors import (
    BandEmpty,
    DegenerateWindow,
    InsufficientSamples,
    InvalidParameter,
    LengthMismatch,
    SyncFailed,
)
from .frame_builder import CazacSequence, FrameLayout, decode_frame_id, qpsk_demap, qpsk_header
from .signal_core import (
    ComplexSeries,
    RrcFilter,
    bandpass_fft,
    correlate_delay,
    estimate_tone,
    matched_filter,
    periodogram,
    phase_ramp,
    refine_tone,
    resample,
)
from .ukf import UkfConfig, ukf_filter

SKEW_BOUND = 1e-3
# search half-width around the expected partner pilot, covers |delta_f - 1| <= SKEW_BOUND
_PARTNER_SEARCH = 2e5
_ONSET_SMOOTH = 64  # decimated samples
_ONSET_MARGIN = 8  # decimated samples kept before the detected onset
_ONSET_RUN = 4 * _ONSET_SMOOTH  # shortest run that counts as signal


@dataclass(frozen=True)
class ReceiverConfig:
    pilot_half_width: float = 2e6  # Hz, FFT mask around pilot 1
    pilot_decimation: int = 125  # UKF runs at adc_rate / pilot_decimation
    mth_power_order: int = 4
    mth_power_window: int = 256  # symbols, QPSK branch
    quantum_theta_window: int = 2048  # symbols, residual phase applied to the quantum branch
    sync_threshold: float = 0.4
    skew_compensation: bool = True
    residual_phase_correction: bool = True

    def __post_init__(self):
        if self.mth_power_order < 2 or min(self.mth_power_window, self.quantum_theta_window) < 8:
            raise InvalidParameter("M-th power needs M >= 2 and N >= 8")
        if not 0 < self.sync_threshold < 1:
            raise InvalidParameter("sync_threshold must be in (0, 1)")
        if self.pilot_decimation < 1 or not self.pilot_half_width > 0:
            raise InvalidParameter("pilot_decimation >= 1 and pilot_half_width > 0 required")


@dataclass
class SyncState:
    """Per-frame synchronization parameters, filled block by block."""

    f_pilot1_rx: float = math.nan
    f_pilot2_rx: float = math.nan
    delta_f: float = 1.0
    f_quantum_rx: float = math.nan
    f_qpsk_rx: float = math.nan
    phase_track: np.ndarray = field(default_factory=lambda: np.zeros(0))  # rad, one value per phase_step samples
    phase_step: int = 1
    onset: int = 0  # first record sample carrying signal
    optimum_sample: int = 0
    frame_delay: int = 0  # symbol index of the header in the stream sampled at optimum_sample
    residual_theta: np.ndarray = field(default_factory=lambda: np.zeros(0))  # rad per window
    theta_start: int = 0  # stream index of the first residual_theta window
    theta_window: int = 256
    quantum_theta: np.ndarray = field(default_factory=lambda: np.zeros(0))  # rad per quantum window
    quantum_theta_window: int = 2048
    qpsk_branch: int = 0  # multiples of pi/2 removed after header correlation
    peak_metric: float = math.nan
    bulk_phase: float = 0.0

    def phase_at(self, n: np.ndarray) -> np.ndarray:
        """Phase track interpolated to record sample indices ``n``."""
        if self.phase_track.size == 0:
            return np.zeros(np.shape(n))
        grid = np.arange(self.phase_track.size) * self.phase_step
        return np.interp(n, grid, self.phase_track)

    def theta_for(self, stream_index: np.ndarray, quantum: bool = False) -> np.ndarray:
        """Piecewise-constant residual phase for symbol-stream indices."""
        theta, window = (
            (self.quantum_theta, self.quantum_theta_window) if quantum else (self.residual_theta, self.theta_window)
        )
        if theta.size == 0:
            return np.zeros(np.shape(stream_index))
        w = (np.asarray(stream_index) - self.theta_start) // window
        return theta[np.clip(w, 0, theta.size - 1)]


@dataclass(frozen=True)
class RecoveredFrame:
    quantum_symbols: np.ndarray
    reference_symbols_rx: np.ndarray
    qpsk_symbols_rx: np.ndarray
    qpsk_bits: np.ndarray
    frame_id: int | None
    sync: SyncState


@dataclass(frozen=True)
class Acquisition:
    """Output of blocks 1-8: the phase-compensated record and its sync state."""

    record: ComplexSeries
    state: SyncState
    qpsk_symbols: np.ndarray  # frame-aligned, n_symbols long
    qpsk_bits: np.ndarray
    frame_id: int | None


# -- individual blocks --------------------------------------------------------


def estimate_skew(f1_rx: float, f2_rx: float, pilot_spacing_tx: float) -> float:
    """Receiver/transmitter frequency ratio from the received pilot spacing."""
    if not f1_rx > f2_rx:
        raise InvalidParameter(f"need f1_rx > f2_rx, got {f1_rx} <= {f2_rx}")
    if not pilot_spacing_tx > 0:
        raise InvalidParameter("pilot_spacing_tx must be positive")
    return (f1_rx - f2_rx) / pilot_spacing_tx


def find_pilots(x: ComplexSeries, layout: FrameLayout, spectrum=None) -> tuple[float, float]:
    """Received frequencies (f1, f2) of the two pilots.

    The strongest periodogram peak is one of the pilots; the partner is looked
    for one pilot spacing below and above it, and the stronger candidate
    decides which pilot the peak was.
    """
    if spectrum is None:
        spectrum = periodogram(x)
    freqs, power = spectrum
    nyq = x.sample_rate / 2
    fa, _ = estimate_tone(x, (freqs[0], freqs[-1]), spectrum)
    spacing = layout.pilot_spacing
    candidates = {}
    for sign in (-1, 1):
        center = fa + sign * spacing
        lo, hi = center - _PARTNER_SEARCH - SKEW_BOUND * spacing, center + _PARTNER_SEARCH + SKEW_BOUND * spacing
        if lo <= -nyq or hi >= nyq:
            continue
        try:
            candidates[sign] = estimate_tone(x, (lo, hi), spectrum)
        except BandEmpty:
            continue
    if not candidates:
        raise BandEmpty("no partner pilot inside the sampled band")
    sign = max(candidates, key=lambda s: candidates[s][1])
    fa, fb = refine_tone(x, fa), refine_tone(x, candidates[sign][0])
    return (fa, fb) if sign < 0 else (fb, fa)


def ukf_track_phase(pilot: ComplexSeries, cfg: UkfConfig = UkfConfig(), noise_variance: float | None = None):
    """Unwrapped phase of a baseband pilot from the 2-state UKF (see :mod:`.ukf`)."""
    return ukf_filter(pilot, cfg, noise_variance)[0]


def compensate_phase(x: ComplexSeries, phases) -> ComplexSeries:
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (len(x),):
        raise LengthMismatch(f"{phases.size} phases for {len(x)} samples")
    return x.with_samples(x.samples * np.exp(-1j * phases))


def select_optimum_sample(x: ComplexSeries | np.ndarray, sps: int, rrc: RrcFilter | None = None) -> int:
    """Sampling phase in [0, sps) with the largest mean power.

    With ``rrc`` the signal is matched-filtered first; otherwise it is assumed
    to be filtered already.  Near-equal powers resolve to the smallest phase.
    """
    samples = x.samples if isinstance(x, ComplexSeries) else np.asarray(x, dtype=np.complex128)
    if samples.size < 10 * sps:
        raise InvalidParameter("need at least 10 symbols of samples")
    if rrc is not None:
        samples = matched_filter(samples, rrc)
    n = samples.size // sps * sps
    power = np.mean(np.abs(samples[:n].reshape(-1, sps)) ** 2, axis=0)
    best = power.max()
    return int(np.flatnonzero(power >= best * (1 - 1e-12))[0])


def mth_power_phase(symbols, M: int = 4, N: int = 256) -> np.ndarray:
    """Per-window phase (1/M) arg(sum x^M), unwrapped modulo 2 pi / M.

    Windows are non-overlapping; a trailing partial window is merged into the
    last full one.
    """
    x = np.asarray(symbols, dtype=np.complex128)
    if M < 2 or N < 8:
        raise InvalidParameter("need M >= 2 and N >= 8")
    n_win = x.size // N
    if n_win < 1:
        raise InvalidParameter(f"{x.size} symbols do not fill one window of {N}")
    xm = x**M
    sums = xm[: n_win * N].reshape(n_win, N).sum(axis=1)
    sums[-1] += xm[n_win * N :].sum()
    if np.any(np.abs(sums) < 1e-12):
        raise DegenerateWindow("M-th power sum vanished in a window")
    theta = np.angle(sums) / M
    return np.unwrap(theta, period=2 * np.pi / M)


def downconvert(x: ComplexSeries, f: float, start: int = 0) -> np.ndarray:
    """Samples shifted by -f Hz, phase referenced to record index 0."""
    return x.samples * np.conj(phase_ramp(len(x), f / x.sample_rate, start))


def _stream(x: ComplexSeries, f: float, rrc: RrcFilter, offset: int, first: int, count: int | None = None):
    """Matched-filter output at samples offset + k * sps for k >= first (``count`` of them)."""
    sps = rrc.samples_per_symbol
    half = rrc.delay
    n = len(x)
    last = (n - 1 - offset) // sps if count is None else first + count - 1
    lo = offset + first * sps
    hi = offset + last * sps
    if lo < 0 or hi >= n or last < first:
        raise InsufficientSamples(f"symbols {first}..{last} at offset {offset} are outside the record")
    a, b = max(0, lo - half), min(n, hi + half + 1)
    seg = downconvert(x.with_samples(x.samples[a:b]), f, start=a)
    mf = matched_filter(seg, rrc)
    return mf[lo - a : hi - a + 1 : sps]


def demodulate_qpsk(x: ComplexSeries, state: SyncState, layout: FrameLayout, rrc: RrcFilter, correct: bool = True):
    """QPSK symbols and hard bits from ``state.theta_start`` to the record end.

    Fills ``state.residual_theta`` (per-window M-th power phase, corrected for
    the diagonal constellation's pi/4 offset).  ``correct=False`` skips the
    residual-phase removal.
    """
    raw = _stream(x, state.f_qpsk_rx, rrc, state.optimum_sample, state.theta_start)
    if correct:
        theta = mth_power_phase(raw, 4, state.theta_window) - np.pi / 4
    else:
        theta = np.zeros(max(1, raw.size // state.theta_window))
    state.residual_theta = theta
    idx = state.theta_start + np.arange(raw.size)
    symbols = raw * np.exp(-1j * state.theta_for(idx))
    return symbols, qpsk_demap(symbols)


def synchronize_frame(qpsk_symbols, header, threshold: float = 0.4) -> tuple[int, float]:
    """Header position in the symbol stream and its normalized correlation."""
    lag, metric = correlate_delay(qpsk_symbols, header)
    if metric < threshold:
        raise SyncFailed(f"header correlation {metric:.3f} below threshold {threshold}")
    return lag, metric


def extract_quantum_symbols(
    x: ComplexSeries, state: SyncState, layout: FrameLayout, rrc: RrcFilter, delay_error: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """(reference_rx, key_rx) from the phase-compensated record.

    ``delay_error`` (samples) deliberately mis-times the extraction.
    """
    first = state.frame_delay
    offset = state.optimum_sample + delay_error
    symbols = _stream(x, state.f_quantum_rx, rrc, offset, first, layout.n_symbols)
    idx = first + np.arange(layout.n_symbols)
    symbols = symbols * np.exp(-1j * state.theta_for(idx, quantum=True))
    return symbols[: layout.n_reference], symbols[layout.n_reference :]


def bulk_phase(ref_rx, ref_tx) -> float:
    ref_tx = ref_tx.values if isinstance(ref_tx, CazacSequence) else np.asarray(ref_tx)
    ref_rx = np.asarray(ref_rx)
    if ref_rx.shape != ref_tx.shape:
        raise LengthMismatch(f"reference lengths differ: {ref_rx.size} vs {ref_tx.size}")
    s = np.vdot(ref_tx, ref_rx)
    if abs(s) < 1e-12:
        raise DegenerateWindow("reference correlation vanished")
    return float(np.angle(s))


def correct_bulk_phase(symbols, ref_rx, ref_tx) -> np.ndarray:
    """Rotate ``symbols`` by minus the phase of sum conj(ref_tx) ref_rx."""
    return np.asarray(symbols) * np.exp(-1j * bulk_phase(ref_rx, ref_tx))


# -- orchestration ------------------------------------------------------------


def _signal_onset(pilot: np.ndarray) -> int:
    """First decimated pilot sample after the leading no-signal stretch.

    The onset is the start of the first sustained run above half the typical
    power; short bursts (circular band-pass ringing from the record's end)
    are skipped.
    """
    env = uniform_filter1d(np.abs(pilot) ** 2, _ONSET_SMOOTH, mode="nearest")
    above = env >= np.percentile(env, 75) / 2
    edges = np.flatnonzero(np.diff(np.concatenate([[0], above.astype(np.int8), [0]])))
    starts, ends = edges[0::2], edges[1::2]
    long = np.flatnonzero(ends - starts >= _ONSET_RUN)
    if not long.size:
        return 0
    return max(0, int(starts[long[0]]) - _ONSET_MARGIN)


def _pilot_noise_variance(pilot: np.ndarray, rate: float, half_width: float) -> float:
    """Noise power inside the pilot mask, read off the spectrum away from the tone."""
    spec = np.abs(sfft.fft(pilot)) ** 2 / pilot.size
    f = np.abs(sfft.fftfreq(pilot.size, d=1.0 / rate))
    floor = (f > 0.1 * half_width) & (f < 0.9 * half_width)
    if not floor.any():
        return float(np.mean(np.abs(pilot) ** 2)) * 1e-3
    return float(np.mean(spec[floor])) * min(1.0, 2 * half_width / rate)


class FrameReceiver:
    """Runs the chain for one layout; stateless between frames."""

    def __init__(self, layout: FrameLayout, cfg: ReceiverConfig = ReceiverConfig(), ukf: UkfConfig = UkfConfig()):
        self.layout = layout
        self.cfg = cfg
        self.ukf = ukf
        self.rrc = layout.rrc()
        self.header = qpsk_header(layout.n_qpsk_header)

    def acquire(self, record: ComplexSeries, known_start: int | None = None, symbol_error: int = 0) -> Acquisition:
        """Blocks 1-8.

        ``known_start`` (record sample of the first frame symbol) models a
        shared clock and trigger: no skew correction and no header search.
        ``symbol_error`` shifts the detected frame start, emulating a
        synchronization failure.
        """
        lay, cfg = self.layout, self.cfg
        sps = lay.sps
        state = SyncState(theta_window=cfg.mth_power_window, quantum_theta_window=cfg.quantum_theta_window)

        spectrum = periodogram(record)
        f1, f2 = find_pilots(record, lay, spectrum)
        state.f_pilot1_rx, state.f_pilot2_rx = f1, f2
        delta_f = estimate_skew(f1, f2, lay.pilot_spacing)
        if abs(delta_f - 1) > SKEW_BOUND:
            raise SyncFailed(f"pilot spacing implies skew {delta_f}, outside the sanity bound")
        state.delta_f = delta_f

        x = record
        if known_start is None and cfg.skew_compensation:
            fs = record.sample_rate
            center = (f1 + f2) / 2 / delta_f
            x = resample(record.relabel(fs / delta_f), delta_f, center=center).relabel(fs)
            f1c = f1 / delta_f
        else:
            f1c = f1
        state.f_quantum_rx = f1c + (lay.f_quantum - lay.f_pilot1)
        state.f_qpsk_rx = f1c + (lay.f_qpsk - lay.f_pilot1)

        # UKF on pilot 1
        d = cfg.pilot_decimation
        band = bandpass_fft(x, f1c, cfg.pilot_half_width)
        pilot = downconvert(band, f1c)[::d]
        onset = _signal_onset(pilot)
        rate_dec = x.sample_rate / d
        nv = _pilot_noise_variance(pilot[onset:], rate_dec, cfg.pilot_half_width)
        track = ukf_filter(ComplexSeries(pilot[onset:], rate_dec), self.ukf, nv)[0]
        state.phase_track = np.concatenate([np.full(onset, track[0]), track])
        state.phase_step = d
        state.onset = onset * d
        x = compensate_phase(x, state.phase_at(np.arange(len(x))))

        if known_start is None:
            base = downconvert(x.with_samples(x.samples[state.onset :]), state.f_qpsk_rx, start=state.onset)
            k = select_optimum_sample(base, sps, self.rrc)
            state.optimum_sample = (state.onset + k) % sps
        else:
            state.optimum_sample = known_start % sps
        state.theta_start = -(-(state.onset - state.optimum_sample) // sps)  # ceil

        symbols, _ = demodulate_qpsk(x, state, lay, self.rrc, correct=cfg.residual_phase_correction)
        if cfg.residual_phase_correction:
            # same estimator over longer windows: less noise injected into the key symbols
            raw = symbols * np.exp(1j * state.theta_for(state.theta_start + np.arange(symbols.size)))
            n_q = min(cfg.quantum_theta_window, raw.size)
            state.quantum_theta_window = n_q
            state.quantum_theta = mth_power_phase(raw, cfg.mth_power_order, n_q)
        if known_start is None:
            lag, metric = synchronize_frame(symbols, self.header, cfg.sync_threshold)
            state.frame_delay = state.theta_start + lag
        else:
            state.frame_delay = (known_start - state.optimum_sample) // sps
            lag = state.frame_delay - state.theta_start
            if lag < 0 or lag + lay.n_symbols > symbols.size:
                raise InsufficientSamples("known frame start lies outside the record")
            seg = symbols[lag : lag + self.header.size]
            metric = abs(np.vdot(self.header, seg)) / (np.linalg.norm(self.header) * np.linalg.norm(seg))
        state.peak_metric = float(metric)
        lag += symbol_error
        state.frame_delay += symbol_error
        if lag < 0 or lag + lay.n_symbols > symbols.size:
            raise InsufficientSamples("frame runs past the end of the record")

        # pi/2 ambiguity: choose the branch that makes the header correlation real and positive
        frame = symbols[lag : lag + lay.n_symbols]
        c = np.vdot(self.header, frame[: self.header.size])
        branch = int(np.round(np.angle(c) / (np.pi / 2))) % 4
        state.qpsk_branch = branch
        # without the blind tracker the header angle is the only phase reference: apply it whole
        rotation = branch * np.pi / 2 if cfg.residual_phase_correction else float(np.angle(c))
        state.residual_theta = state.residual_theta + rotation
        frame = frame * np.exp(-1j * rotation)
        bits = qpsk_demap(frame)
        payload = frame[lay.n_qpsk_header : lay.n_qpsk_header + lay.id_symbols]
        frame_id = decode_frame_id(payload, lay.id_bits, lay.id_repeat)
        return Acquisition(record=x, state=state, qpsk_symbols=frame, qpsk_bits=bits, frame_id=frame_id)

    def recover(self, acq: Acquisition, reference_tx, delay_error: int = 0) -> RecoveredFrame:
        """Blocks 9-10 on an acquired frame."""
        state = acq.state
        ref_rx, key_rx = extract_quantum_symbols(acq.record, state, self.layout, self.rrc, delay_error)
        phi = bulk_phase(ref_rx, reference_tx)
        if delay_error == 0:
            state.bulk_phase = phi
        rot = np.exp(-1j * phi)
        return RecoveredFrame(
            quantum_symbols=key_rx * rot,
            reference_symbols_rx=ref_rx * rot,
            qpsk_symbols_rx=acq.qpsk_symbols,
            qpsk_bits=acq.qpsk_bits,
            frame_id=acq.frame_id,
            sync=state,
        )

    def receive(self, record: ComplexSeries, reference_tx, known_start: int | None = None) -> RecoveredFrame:
        return self.recover(self.acquire(record, known_start), reference_tx)
