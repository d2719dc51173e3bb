"""Shot-noise normalization, channel estimation, QPSK BER and secret key fraction.

Conventions: quadrature variances in SNU (vacuum = 1); a thermal state with
mean photon number n has quadrature variance 2n + 1, so excess noise in PNU
is half the excess variance in SNU.  Excess noise is referred to the channel
output (before the detector), see :func:`estimate_channel`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel_sim import CalibrationRecord
from .errors import DegenerateWindow, InvalidCalibration, InvalidParameter, LengthMismatch
from .signal_core import ComplexSeries

MIN_ESTIMATION_SYMBOLS = 10_000


@dataclass(frozen=True)
class SecurityParams:
    beta: float = 0.95
    detector_efficiency: float = 0.69
    electronic_noise: float = 0.1  # SNU per quadrature
    trusted_receiver: bool = True

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise InvalidParameter(f"beta must be in (0, 1], got {self.beta}")
        if not 0 < self.detector_efficiency <= 1:
            raise InvalidParameter("detector_efficiency must be in (0, 1]")
        if self.electronic_noise < 0:
            raise InvalidParameter("electronic_noise must be >= 0")


@dataclass(frozen=True)
class FrameEstimate:
    frame_id: int
    transmittance_hat: float  # total, fibre x detector
    excess_noise_hat: float  # PNU, channel-output referred
    ber: float
    skf: float  # bits/symbol
    accepted: bool

    @property
    def excess_noise_mpnu(self) -> float:
        return 1e3 * self.excess_noise_hat


def normalize_to_snu(raw: ComplexSeries, cal: CalibrationRecord) -> ComplexSeries:
    """Remove the mean and scale so one SNU of vacuum noise has unit variance."""
    snu = cal.shot_plus_electronic_variance - cal.electronic_variance
    if not snu > 0:
        raise InvalidCalibration("shot-noise variance must exceed the electronic variance")
    x = raw.samples
    return raw.with_samples((x - x.mean()) / math.sqrt(snu))


def estimate_channel(alice, bob, params: SecurityParams, vacuum: float = 1.0) -> tuple[float, float]:
    """(total transmittance, excess noise in PNU) from paired symbols.

    Model ``b = sqrt(tau / 2) a + z`` with per-quadrature
    ``Var(z) = vacuum + v_el + eta * eps``: the thermal noise ``eps`` (PNU)
    present at the channel output reaches each heterodyne quadrature scaled
    by the detector efficiency.  The detector's efficiency and electronic
    noise are always removed here, whatever ``params.trusted_receiver`` says:
    the flag changes what Eve is credited with in :func:`secret_key_fraction`,
    not the physical channel.  ``vacuum = 0`` is only meaningful for
    noiseless test channels.
    """
    a = np.asarray(alice, dtype=np.complex128)
    b = np.asarray(bob, dtype=np.complex128)
    if a.shape != b.shape:
        raise LengthMismatch(f"alice has {a.size} symbols, bob {b.size}")
    if a.size < MIN_ESTIMATION_SYMBOLS:
        raise InvalidParameter(f"need at least {MIN_ESTIMATION_SYMBOLS} symbols, got {a.size}")
    power = float(np.mean(np.abs(a) ** 2))
    if power < 1e-12:
        raise DegenerateWindow("alice's symbols carry no power")
    gain = float(np.real(np.vdot(a, b)) / a.size / power)  # estimates sqrt(tau / 2)
    residual = b - gain * a
    var_z = float(np.mean(np.abs(residual) ** 2)) / 2
    tau = 2 * gain**2
    eps = (var_z - vacuum - params.electronic_noise) / params.detector_efficiency
    return tau, eps


def ber(bits_rx, bits_tx) -> float:
    rx = np.asarray(bits_rx).astype(bool)
    tx = np.asarray(bits_tx).astype(bool)
    if rx.shape != tx.shape:
        raise LengthMismatch(f"{rx.size} received bits vs {tx.size} transmitted")
    if rx.size < 1:
        raise InvalidParameter("need at least one bit")
    return float(np.count_nonzero(rx != tx)) / rx.size


def accept_frame(ber_value: float, threshold: float = 0.1) -> bool:
    if not 0 < threshold < 0.5:
        raise InvalidParameter(f"threshold must be in (0, 0.5), got {threshold}")
    return bool(ber_value <= threshold)


def _g(x: float) -> float:
    """Von Neumann entropy of a thermal state with symplectic eigenvalue x."""
    if x <= 1 + 1e-12:
        return 0.0
    a, b = (x + 1) / 2, (x - 1) / 2
    return a * math.log2(a) - b * math.log2(b)


def _key_terms(v_mod: float, t: float, xi: float, eta: float, v_el: float) -> tuple[float, float]:
    """(I_AB, chi_BE) for heterodyne detection, reverse reconciliation.

    ``xi`` is the excess noise referred to the channel input (SNU); the
    detector (eta, v_el) is trusted.
    """
    v = v_mod + 1
    chi_line = 1 / t - 1 + xi
    chi_het = (2 - eta + 2 * v_el) / eta
    chi_tot = chi_line + chi_het / t
    i_ab = math.log2((v + chi_tot) / (1 + chi_tot))

    a = v**2 * (1 - 2 * t) + 2 * t + t**2 * (v + chi_line) ** 2
    b = t**2 * (v * chi_line + 1) ** 2
    disc = math.sqrt(max(a * a - 4 * b, 0.0))
    l1, l2 = math.sqrt((a + disc) / 2), math.sqrt(max((a - disc) / 2, 0.0))

    sb = math.sqrt(b)
    c = (a * chi_het**2 + b + 1 + 2 * chi_het * (v * sb + t * (v + chi_line)) + 2 * t * (v**2 - 1)) / (
        t**2 * (v + chi_tot) ** 2
    )
    d = ((v + sb * chi_het) / (t * (v + chi_tot))) ** 2
    disc = math.sqrt(max(c * c - 4 * d, 0.0))
    l3, l4 = math.sqrt((c + disc) / 2), math.sqrt(max((c - disc) / 2, 0.0))
    chi = _g(l1) + _g(l2) - _g(l3) - _g(l4)
    return i_ab, chi


def secret_key_fraction(v_mod: float, transmittance: float, excess_noise: float, params: SecurityParams) -> float:
    """Asymptotic key fraction beta I(A:B) - chi(B:E) in bits/symbol, clipped at 0.

    ``transmittance`` is the fibre transmittance T (detector excluded) and
    ``excess_noise`` the channel-output excess noise in PNU.
    """
    if not v_mod > 0:
        raise InvalidParameter("V_mod must be positive")
    if not 0 < transmittance <= 1:
        raise InvalidParameter("transmittance must be in (0, 1]")
    if not excess_noise >= 0:
        raise InvalidParameter("excess_noise must be >= 0")
    t = transmittance
    xi = 2 * excess_noise / t  # SNU, channel input
    eta, v_el = params.detector_efficiency, params.electronic_noise
    if not params.trusted_receiver:
        # detector loss and noise handed to Eve
        xi = xi + 2 * v_el / (eta * t)
        t, eta, v_el = eta * t, 1.0, 0.0
    i_ab, chi = _key_terms(v_mod, t, xi, eta, v_el)
    return max(0.0, params.beta * i_ab - chi)
