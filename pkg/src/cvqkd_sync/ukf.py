"""Unscented Kalman filter tracking the phase of a (baseband) pilot tone.

State is ``[phase, frequency residual]`` (rad, rad/step) evolving as a random
walk; the measurement is the complex pilot ``A exp(j phase)`` in additive
circular Gaussian noise, observed as its two real components.  The
measurement update uses scaled sigma points; because the dynamics are linear
the backward (RTS) smoothing pass is exact given the forward statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FilterDivergence, InvalidParameter
from .signal_core import ComplexSeries


@dataclass(frozen=True)
class UkfConfig:
    process_noise_phase: float = 1.6e-4  # rad^2/step (2 pi * 200 Hz at 8 MS/s)
    process_noise_freq: float = 1e-12  # (rad/step)^2 per step
    measurement_noise: float = 0.05  # per-component variance, pilot amplitude normalized to 1
    sigma_point_spread: float = 0.5  # alpha of the scaled unscented transform
    initial_freq_std: float = 0.01  # rad/step
    innovation_bound: float = 50.0  # normalized innovation squared
    max_outlier_fraction: float = 0.01
    smooth: bool = True
    adaptive_measurement_noise: bool = True

    def __post_init__(self):
        for name in ("process_noise_phase", "process_noise_freq", "measurement_noise", "sigma_point_spread"):
            if not getattr(self, name) > 0:
                raise InvalidParameter(f"UkfConfig.{name} must be positive")


def _weights(alpha: float, n: int = 2, beta: float = 2.0, kappa: float = 0.0):
    lam = alpha**2 * (n + kappa) - n
    wm = [lam / (n + lam)] + [1.0 / (2 * (n + lam))] * (2 * n)
    wc = [wm[0] + (1 - alpha**2 + beta)] + wm[1:]
    return n + lam, wm, wc


def _run(y: np.ndarray, cfg: UkfConfig, r: float, amplitude: float):
    """Forward UKF pass in scalar arithmetic; returns filtered and predicted moments."""
    n = y.size
    spread, wm, wc = _weights(cfg.sigma_point_spread)
    qp, qf = cfg.process_noise_phase, cfg.process_noise_freq
    yr, yi = y.real.tolist(), y.imag.tolist()

    xf = np.empty((n, 2))
    pf = np.empty((n, 3))  # p00, p01, p11
    xp = np.empty((n, 2))
    pp = np.empty((n, 3))
    outliers = 0

    phi, om = math.atan2(yi[0], yr[0]), 0.0
    p00, p01, p11 = r / amplitude**2 + 1e-6, 0.0, cfg.initial_freq_std**2
    for k in range(n):
        if k:
            # linear prediction: phi += om
            phi += om
            p00, p01, p11 = p00 + 2 * p01 + p11 + qp, p01 + p11, p11 + qf
        xp[k] = phi, om
        pp[k] = p00, p01, p11

        # sigma points from the Cholesky factor of spread * P
        a = math.sqrt(max(spread * p00, 1e-30))
        b = spread * p01 / a
        c = math.sqrt(max(spread * p11 - b * b, 0.0))
        d_phi = (0.0, a, 0.0, -a, 0.0)
        d_om = (0.0, b, c, -b, -c)
        zs = [(amplitude * math.cos(phi + dp), amplitude * math.sin(phi + dp)) for dp in d_phi]
        m0 = sum(w * z[0] for w, z in zip(wm, zs))
        m1 = sum(w * z[1] for w, z in zip(wm, zs))
        s00 = s01 = s11 = c0 = c1 = c2 = c3 = 0.0
        for w, z, dp, do in zip(wc, zs, d_phi, d_om):
            e0, e1 = z[0] - m0, z[1] - m1
            s00 += w * e0 * e0
            s01 += w * e0 * e1
            s11 += w * e1 * e1
            c0 += w * dp * e0
            c1 += w * dp * e1
            c2 += w * do * e0
            c3 += w * do * e1
        s00 += r
        s11 += r
        det = s00 * s11 - s01 * s01
        i00, i01, i11 = s11 / det, -s01 / det, s00 / det
        v0, v1 = yr[k] - m0, yi[k] - m1
        if v0 * (i00 * v0 + i01 * v1) + v1 * (i01 * v0 + i11 * v1) > cfg.innovation_bound:
            outliers += 1
        k00, k01 = c0 * i00 + c1 * i01, c0 * i01 + c1 * i11
        k10, k11 = c2 * i00 + c3 * i01, c2 * i01 + c3 * i11
        phi += k00 * v0 + k01 * v1
        om += k10 * v0 + k11 * v1
        # P -= K S K^T, written as P -= K C^T with C the state/measurement cross-covariance
        p00 -= k00 * c0 + k01 * c1
        p01 -= k00 * c2 + k01 * c3
        p11 -= k10 * c2 + k11 * c3
        xf[k] = phi, om
        pf[k] = p00, p01, p11
    return xf, pf, xp, pp, outliers


def _rts(xf, pf, xp, pp):
    n = xf.shape[0]
    xs = xf.copy()
    ps = pf.copy()
    for k in range(n - 2, -1, -1):
        f00, f01, f11 = pf[k]
        q00, q01, q11 = pp[k + 1]
        # G = Pf F^T Pp^-1 with F = [[1, 1], [0, 1]]
        a00, a01 = f00 + f01, f01
        a10, a11 = f01 + f11, f11
        det = q00 * q11 - q01 * q01
        j00, j01, j11 = q11 / det, -q01 / det, q00 / det
        g00, g01 = a00 * j00 + a01 * j01, a00 * j01 + a01 * j11
        g10, g11 = a10 * j00 + a11 * j01, a10 * j01 + a11 * j11
        d0 = xs[k + 1, 0] - xp[k + 1, 0]
        d1 = xs[k + 1, 1] - xp[k + 1, 1]
        xs[k, 0] += g00 * d0 + g01 * d1
        xs[k, 1] += g10 * d0 + g11 * d1
        e00 = ps[k + 1, 0] - q00
        e01 = ps[k + 1, 1] - q01
        e11 = ps[k + 1, 2] - q11
        ps[k, 0] += g00 * (g00 * e00 + g01 * e01) + g01 * (g00 * e01 + g01 * e11)
        ps[k, 1] += g00 * (g10 * e00 + g11 * e01) + g01 * (g10 * e01 + g11 * e11)
        ps[k, 2] += g10 * (g10 * e00 + g11 * e01) + g11 * (g10 * e01 + g11 * e11)
    return xs, ps


def ukf_filter(pilot: ComplexSeries, cfg: UkfConfig, noise_variance: float | None = None):
    """Phase and frequency-residual tracks (rad, rad/step) for a baseband pilot.

    ``noise_variance`` is the complex noise power per sample in the pilot's
    units; when given (and the config is adaptive) it replaces the configured
    measurement noise.
    """
    y = pilot.samples
    total = float(np.mean(np.abs(y) ** 2))
    if noise_variance is not None and cfg.adaptive_measurement_noise:
        amplitude = math.sqrt(max(total - noise_variance, 1e-3 * total))
        r = max(noise_variance / 2 / amplitude**2, 1e-12)
    else:
        amplitude = math.sqrt(total)
        r = cfg.measurement_noise
    y = y / amplitude
    xf, pf, xp, pp, outliers = _run(y, cfg, r, 1.0)
    if outliers > cfg.max_outlier_fraction * y.size:
        raise FilterDivergence(f"{outliers} of {y.size} innovations exceeded the bound")
    if cfg.smooth and y.size > 1:
        xf, _ = _rts(xf, pf, xp, pp)
    return xf[:, 0], xf[:, 1]

