"""Transmitter: quantum symbols, CAZAC references, QPSK header/ID and pilots.

Amplitude convention: Alice's symbol ``a = q + jp`` is written in shot-noise
units with per-quadrature modulation variance ``V_mod = 2 * nbar``, hence
``E|a|^2 = 4 * nbar``.  The waveform carries ``a / sqrt(2)``: a heterodyne
receiver splits the signal over two simultaneous quadrature measurements, so
after a lossless channel and matched filtering Bob reads ``a / sqrt(2)`` on
top of one unit of vacuum noise per quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter, LayoutMismatch
from .seeding import derive_seed
from .signal_core import ComplexSeries, RrcFilter, design_rrc, phase_ramp

HETERODYNE_AMPLITUDE = 1.0 / math.sqrt(2.0)
HEADER_SEED = 0x5EED


@dataclass(frozen=True)
class FrameLayout:
    n_quantum: int = 10_000
    n_reference: int = 2_000
    n_qpsk_header: int = 2_000
    symbol_rate: float = 20e6
    dac_rate: float = 1e9
    f_quantum: float = 160e6
    f_pilot1: float = 120e6
    f_pilot2: float = 25e6
    f_qpsk: float = 80e6
    qpsk_power_offset: float = 7.0  # dB above the quantum stream
    rolloff: float = 0.2
    pilot_power: float = 10.0  # dB above the quantum-band power, per pilot
    rrc_span: int = 20
    cazac_root: int = 7
    id_bits: int = 16
    id_repeat: int = 8

    def __post_init__(self):
        sps = self.dac_rate / self.symbol_rate
        if abs(sps - round(sps)) > 1e-9 or round(sps) < 2:
            raise InvalidParameter("dac_rate must be an integer multiple (>= 2) of symbol_rate")
        if self.n_reference > self.n_quantum:
            raise InvalidParameter("n_reference must not exceed n_quantum")
        if min(self.n_quantum, self.n_reference, self.n_qpsk_header) < 1:
            raise InvalidParameter("symbol counts must be positive")
        if self.n_qpsk_header + self.id_symbols > self.n_symbols:
            raise InvalidParameter("QPSK header and ID payload do not fit in the frame")
        if not self.f_pilot1 > self.f_pilot2:
            raise InvalidParameter("f_pilot1 must be above f_pilot2")
        half = self.half_bandwidth
        edges = sorted(
            [
                (self.f_pilot2, self.f_pilot2),
                (self.f_pilot1, self.f_pilot1),
                (self.f_qpsk - half, self.f_qpsk + half),
                (self.f_quantum - half, self.f_quantum + half),
            ]
        )
        if edges[0][0] <= 0 or edges[-1][1] >= self.dac_rate / 2:
            raise InvalidParameter("multiplexed signals must lie inside (0, dac_rate / 2)")
        for (_, hi), (lo, _) in zip(edges, edges[1:]):
            if not lo > hi:
                raise InvalidParameter("multiplexed signals overlap in frequency")

    @property
    def sps(self) -> int:
        return int(round(self.dac_rate / self.symbol_rate))

    @property
    def n_symbols(self) -> int:
        """Symbols per frame (references + key); the QPSK stream runs alongside."""
        return self.n_reference + self.n_quantum

    @property
    def n_samples(self) -> int:
        return self.n_symbols * self.sps

    @property
    def half_bandwidth(self) -> float:
        return (1 + self.rolloff) * self.symbol_rate / 2

    @property
    def pilot_spacing(self) -> float:
        return self.f_pilot1 - self.f_pilot2

    @property
    def id_symbols(self) -> int:
        return self.id_bits * self.id_repeat // 2

    def rrc(self) -> RrcFilter:
        return design_rrc(self.rolloff, self.rrc_span, self.sps)


@dataclass(frozen=True)
class QuantumSymbols:
    values: np.ndarray
    mean_photon_number: float
    seed: int

    @property
    def modulation_variance(self) -> float:
        """Nominal per-quadrature V_mod in SNU."""
        return 2.0 * self.mean_photon_number


@dataclass(frozen=True)
class CazacSequence:
    length: int
    root: int
    values: np.ndarray


@dataclass(frozen=True)
class QpskFrame:
    header: np.ndarray
    frame_id: int
    payload_symbols: np.ndarray
    filler: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))

    @property
    def symbols(self) -> np.ndarray:
        return np.concatenate([self.header, self.payload_symbols, self.filler])

    @property
    def bits(self) -> np.ndarray:
        return qpsk_demap(self.symbols)


def draw_gaussian_symbols(n: int, nbar: float, seed: int) -> QuantumSymbols:
    """Circularly symmetric Gaussian symbols with per-quadrature variance 2 * nbar."""
    if n < 1:
        raise InvalidParameter("need at least one symbol")
    if not nbar > 0:
        raise InvalidParameter(f"mean photon number must be positive, got {nbar}")
    rng = np.random.default_rng(seed)
    q, p = rng.normal(0.0, math.sqrt(2.0 * nbar), size=(2, n))
    return QuantumSymbols(values=q + 1j * p, mean_photon_number=nbar, seed=seed)


def generate_cazac(length: int, root: int) -> CazacSequence:
    """Zadoff-Chu sequence; the first element is always 1."""
    if length < 2:
        raise InvalidParameter("CAZAC length must be >= 2")
    if math.gcd(root, length) != 1:
        raise InvalidParameter(f"root {root} is not coprime with length {length}")
    k = np.arange(length, dtype=np.int64)
    # reduce the quadratic phase modulo 2*length before scaling (exactness for long sequences)
    if length % 2 == 0:
        num = np.mod(root * k * k, 2 * length)
    else:
        num = np.mod(root * k * (k + 1), 2 * length)
    values = np.exp(-1j * np.pi * num / length)
    return CazacSequence(length=length, root=root, values=values)


def qpsk_map(bits) -> np.ndarray:
    """Gray-mapped unit-energy QPSK: bit pairs (b0, b1) -> ((1-2 b0) + j (1-2 b1)) / sqrt 2."""
    bits = np.asarray(bits, dtype=np.int8).reshape(-1, 2)
    return ((1 - 2 * bits[:, 0]) + 1j * (1 - 2 * bits[:, 1])) / math.sqrt(2.0)


def qpsk_demap(symbols) -> np.ndarray:
    """Quadrant hard decision, inverse of :func:`qpsk_map`."""
    symbols = np.asarray(symbols)
    out = np.empty((symbols.size, 2), dtype=np.int8)
    out[:, 0] = symbols.real < 0
    out[:, 1] = symbols.imag < 0
    return out.reshape(-1)


def qpsk_header(n: int, seed: int = HEADER_SEED) -> np.ndarray:
    """The known header sequence shared by Alice and Bob."""
    rng = np.random.default_rng(seed)
    return qpsk_map(rng.integers(0, 2, size=2 * n))


def encode_frame_id(frame_id: int, n_bits: int = 16, repeat: int = 8) -> np.ndarray:
    if not 0 <= frame_id < 2**n_bits:
        raise InvalidParameter(f"frame_id {frame_id} does not fit in {n_bits} bits")
    if (n_bits * repeat) % 2:
        raise InvalidParameter("ID payload must fill whole QPSK symbols")
    word = [(frame_id >> (n_bits - 1 - i)) & 1 for i in range(n_bits)]
    return qpsk_map(np.tile(word, repeat))


def decode_frame_id(symbols, n_bits: int = 16, repeat: int = 8) -> int:
    """Soft-combine the repeated copies of the ID word and slice."""
    symbols = np.asarray(symbols)
    soft = np.empty(2 * symbols.size)
    soft[0::2] = symbols.real
    soft[1::2] = symbols.imag
    combined = soft[: n_bits * repeat].reshape(repeat, n_bits).sum(axis=0)
    value = 0
    for bit in combined < 0:
        value = (value << 1) | int(bit)
    return value


def make_qpsk_frame(layout: FrameLayout, frame_id: int, seed: int) -> QpskFrame:
    """Header, ID payload and seeded random filler spanning the whole frame."""
    header = qpsk_header(layout.n_qpsk_header)
    payload = encode_frame_id(frame_id, layout.id_bits, layout.id_repeat)
    n_fill = layout.n_symbols - header.size - payload.size
    rng = np.random.default_rng(seed)
    filler = qpsk_map(rng.integers(0, 2, size=2 * n_fill))
    return QpskFrame(header=header, frame_id=frame_id, payload_symbols=payload, filler=filler)


def _shape_periodic(symbols: np.ndarray, rrc: RrcFilter) -> np.ndarray:
    """Cyclic RRC pulse shaping; symbol k is centred on sample k * sps."""
    sps = rrc.samples_per_symbol
    n = symbols.size * sps
    impulses = np.zeros(n, dtype=np.complex128)
    impulses[::sps] = symbols
    kernel = np.zeros(n)
    taps = rrc.taps
    if taps.size > n:
        raise LayoutMismatch("frame shorter than the pulse-shaping filter")
    kernel[: taps.size] = taps
    kernel = np.roll(kernel, -rrc.delay)
    return np.fft.ifft(np.fft.fft(impulses) * np.fft.fft(kernel))


def build_frame(
    layout: FrameLayout,
    quantum: QuantumSymbols,
    ref: CazacSequence,
    qpsk: QpskFrame,
    seed: int,
) -> ComplexSeries:
    """One period of the transmitter's waveform at ``layout.dac_rate``.

    The waveform is cyclic (the generator loops it), so it can be extended with
    :func:`cyclic_extend` without edge effects.  ``seed`` sets the initial
    phases of the four carriers.
    """
    if quantum.values.size != layout.n_quantum:
        raise LayoutMismatch(f"expected {layout.n_quantum} quantum symbols, got {quantum.values.size}")
    if ref.values.size != layout.n_reference:
        raise LayoutMismatch(f"expected {layout.n_reference} reference symbols, got {ref.values.size}")
    qpsk_symbols = qpsk.symbols
    if qpsk_symbols.size != layout.n_symbols:
        raise LayoutMismatch(f"QPSK stream must span {layout.n_symbols} symbols, got {qpsk_symbols.size}")
    if qpsk.header.size != layout.n_qpsk_header:
        raise LayoutMismatch("QPSK header length disagrees with the layout")

    rrc = layout.rrc()
    sps, fs = layout.sps, layout.dac_rate
    n = layout.n_samples
    symbol_power = 2.0 * quantum.modulation_variance  # nominal E|a|^2
    ref_values = ref.values * math.sqrt(symbol_power)
    quantum_stream = np.concatenate([ref_values, quantum.values]) * HETERODYNE_AMPLITUDE
    stream_power = symbol_power * HETERODYNE_AMPLITUDE**2
    qpsk_amp = math.sqrt(stream_power * 10 ** (layout.qpsk_power_offset / 10))
    pilot_amp = math.sqrt(stream_power / sps * 10 ** (layout.pilot_power / 10))

    phases = np.random.default_rng(seed).uniform(0.0, 2 * np.pi, size=4)

    def carrier(f, phase):
        return phase_ramp(n, f / fs) * np.exp(1j * phase)

    wave = _shape_periodic(quantum_stream, rrc) * carrier(layout.f_quantum, phases[0])
    wave += _shape_periodic(qpsk_symbols * qpsk_amp, rrc) * carrier(layout.f_qpsk, phases[1])
    wave += pilot_amp * carrier(layout.f_pilot1, phases[2])
    wave += pilot_amp * carrier(layout.f_pilot2, phases[3])
    return ComplexSeries(wave, fs)


def cyclic_extend(x: ComplexSeries, before: int, after: int) -> ComplexSeries:
    """Surround one waveform period with the neighbouring periods' samples."""
    n = len(x)
    idx = np.arange(-before, n + after) % n
    return x.with_samples(x.samples[idx])


@dataclass(frozen=True)
class TxFrame:
    """Everything Alice knows about one transmitted frame."""

    layout: FrameLayout
    frame_id: int
    quantum: QuantumSymbols
    reference: CazacSequence
    qpsk: QpskFrame
    waveform: ComplexSeries

    @property
    def reference_symbols(self) -> np.ndarray:
        """Reference symbols as transmitted, at the key symbols' power."""
        return self.reference.values * math.sqrt(2.0 * self.quantum.modulation_variance)


def transmit_frame(layout: FrameLayout, frame_id: int, nbar: float, seed: int) -> TxFrame:
    """Draw all of one frame's random content from ``seed`` and build the waveform."""
    s_quantum, s_qpsk, s_carrier = (derive_seed(seed, k) for k in range(3))
    quantum = draw_gaussian_symbols(layout.n_quantum, nbar, s_quantum)
    ref = generate_cazac(layout.n_reference, layout.cazac_root)
    qpsk = make_qpsk_frame(layout, frame_id, s_qpsk)
    wave = build_frame(layout, quantum, ref, qpsk, s_carrier)
    return TxFrame(layout, frame_id, quantum, ref, qpsk, wave)
