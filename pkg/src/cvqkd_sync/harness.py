"""Seeded end-to-end experiments: calibration, frame batches, sweeps and result files.

Every random draw descends from ``config.seed`` through :func:`derive_seed`,
keyed by stream and frame id, so results do not depend on execution order or
on the number of workers.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal as ssig

from . import io
from .channel_sim import CalibrationRecord, ChannelConfig, apply_channel, run_calibration
from .config import ExperimentConfig, config_to_dict, format_config
from .errors import CvqkdError, InvalidParameter
from .frame_builder import TxFrame, cyclic_extend, transmit_frame
from .param_est import (
    FrameEstimate,
    SecurityParams,
    accept_frame,
    ber,
    estimate_channel,
    normalize_to_snu,
    secret_key_fraction,
)
from .seeding import derive_seed
from .signal_core import ComplexSeries
from .sync_dsp import Acquisition, FrameReceiver, ReceiverConfig

_STREAM_FRAME, _STREAM_CALIBRATION, _STREAM_CORRUPT = 1, 2, 3

ESTIMATES_FILE = "estimates.csv"
SUMMARY_FILE = "summary.json"
CONFIG_FILE = "config.txt"


@dataclass(frozen=True)
class Aggregates:
    mean_excess_mpnu: float
    std_excess_mpnu: float
    mean_skf: float
    accepted_fraction: float
    n_frames: int
    n_accepted: int
    n_failed: int  # frames with no estimate (sync or DSP failure)

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def aggregate(rows) -> Aggregates:
    """Statistics over the rows of the estimates table.

    Excess-noise and key statistics use accepted frames only; ``rows`` are
    ``(frame_id, tau, eps_mPNU, ber, skf, accepted)`` as written to CSV.
    """
    rows = list(rows)
    accepted = [r for r in rows if r[5] and math.isfinite(r[2])]
    eps = np.array([r[2] for r in accepted], dtype=float)
    skf = np.array([r[4] for r in accepted], dtype=float)
    return Aggregates(
        mean_excess_mpnu=float(eps.mean()) if eps.size else math.nan,
        std_excess_mpnu=float(eps.std(ddof=1)) if eps.size > 1 else math.nan,
        mean_skf=float(skf.mean()) if skf.size else math.nan,
        accepted_fraction=len(accepted) / len(rows) if rows else math.nan,
        n_frames=len(rows),
        n_accepted=len(accepted),
        n_failed=sum(1 for r in rows if not math.isfinite(r[2])),
    )


def estimate_rows(estimates) -> list[tuple]:
    """Estimates in exactly the units and precision stored in the CSV."""
    return [
        (e.frame_id, e.transmittance_hat, 1e3 * e.excess_noise_hat, e.ber, e.skf, bool(e.accepted)) for e in estimates
    ]


@dataclass
class RunReport:
    config: ExperimentConfig
    calibration: CalibrationRecord
    estimates: list[FrameEstimate]
    failures: dict[int, str] = field(default_factory=dict)
    corrupted: tuple[int, ...] = ()
    wall_seconds: float = 0.0
    spectrum: tuple[np.ndarray, np.ndarray] | None = None
    delay_sweep: list[dict] | None = None

    @property
    def aggregates(self) -> Aggregates:
        return aggregate(estimate_rows(self.estimates))

    @property
    def excess_noise_mpnu(self) -> np.ndarray:
        return np.array([1e3 * e.excess_noise_hat for e in self.estimates])


class Experiment:
    """One configuration's calibrated transmitter, channel and receiver."""

    def __init__(self, config: ExperimentConfig, calibration: CalibrationRecord | None = None):
        self.config = config
        self.channel = config.effective_channel()
        self.calibration = calibration or calibrate(config)
        self.security = replace(
            config.security,
            detector_efficiency=self.channel.efficiency,
            electronic_noise=self.calibration.electronic_noise_snu,
        )
        self.vacuum = 1.0 if self.channel.detection_noise else 0.0
        self.guard = config.guard_symbols * config.layout.sps
        corrupt_rng = np.random.default_rng(derive_seed(config.seed, _STREAM_CORRUPT))
        n_bad = int(round(config.corrupt_fraction * config.n_frames))
        self.corrupted = frozenset(int(i) for i in corrupt_rng.permutation(config.n_frames)[:n_bad])

    def receiver(self, cfg: ReceiverConfig | None = None) -> FrameReceiver:
        return FrameReceiver(self.config.layout, cfg or self.config.receiver, self.config.ukf)

    def frame_start(self, channel: ChannelConfig) -> int:
        return int(round(channel.delay * channel.adc_rate)) + self.guard

    def simulate(self, frame_id: int, channel: ChannelConfig | None = None) -> tuple[TxFrame, ComplexSeries]:
        """Alice's frame and Bob's SNU-normalized record."""
        cfg = self.config
        channel = channel or self.channel
        seed = derive_seed(cfg.seed, _STREAM_FRAME, frame_id)
        tx = transmit_frame(cfg.layout, frame_id, cfg.nbar, derive_seed(seed, 0))
        wave = cyclic_extend(tx.waveform, self.guard, self.guard)
        raw = apply_channel(wave, replace(channel, seed=derive_seed(seed, 1)))
        return tx, normalize_to_snu(raw, self.calibration)

    def acquire(self, frame_id: int, record: ComplexSeries, receiver: FrameReceiver) -> Acquisition:
        known = self.frame_start(self.channel) if self.config.shared_clock else None
        error = self.config.corrupt_symbols if frame_id in self.corrupted else 0
        return receiver.acquire(record, known_start=known, symbol_error=error)

    def estimate(self, tx: TxFrame, frame, header_bits: np.ndarray | None = None) -> FrameEstimate:
        layout = self.config.layout
        n_bits = 2 * layout.n_qpsk_header
        b = ber(frame.qpsk_bits[:n_bits], tx.qpsk.bits[:n_bits])
        tau, eps = estimate_channel(tx.quantum.values, frame.quantum_symbols, self.security, vacuum=self.vacuum)
        ok = accept_frame(b, self.config.ber_threshold) and frame.frame_id == tx.frame_id
        return FrameEstimate(
            frame_id=tx.frame_id,
            transmittance_hat=tau,
            excess_noise_hat=eps,
            ber=b,
            skf=self.key_fraction(tau, eps),
            accepted=ok,
        )

    def key_fraction(self, tau: float, eps: float) -> float:
        t = min(max(tau / self.security.detector_efficiency, 1e-9), 1.0)
        return secret_key_fraction(self.calibration.modulation_variance, t, max(eps, 0.0), self.security)

    def failed(self, frame_id: int) -> FrameEstimate:
        nan = math.nan
        return FrameEstimate(frame_id, nan, nan, nan, 0.0, False)

    def process(self, frame_id: int) -> tuple[FrameEstimate, str | None]:
        tx, record = self.simulate(frame_id)
        rx = self.receiver()
        try:
            acq = self.acquire(frame_id, record, rx)
            frame = rx.recover(acq, tx.reference_symbols, self.config.forced_delay_error)
            return self.estimate(tx, frame), None
        except CvqkdError as exc:
            return self.failed(frame_id), f"{type(exc).__name__}: {exc}"


def calibrate(config: ExperimentConfig) -> CalibrationRecord:
    return run_calibration(
        config.effective_channel(), config.layout, derive_seed(config.seed, _STREAM_CALIBRATION), config.nbar
    )


# worker-process state for parallel runs
_WORKER: Experiment | None = None


def _init_worker(config: ExperimentConfig, calibration: CalibrationRecord) -> None:
    global _WORKER
    _WORKER = Experiment(config, calibration)


def _work(frame_id: int):
    return _WORKER.process(frame_id)


def spectrum_snapshot(record: ComplexSeries, f_max: float = 500e6, nperseg: int = 8192):
    """Welch power spectral density (SNU/Hz) on [0, f_max]."""
    f, p = ssig.welch(record.samples, fs=record.sample_rate, nperseg=nperseg, return_onesided=False)
    keep = (f >= 0) & (f <= f_max)
    order = np.argsort(f[keep])
    return f[keep][order], p[keep][order]


def run(config: ExperimentConfig, write: bool = True, with_spectrum: bool = True) -> RunReport:
    """Calibrate, process ``config.n_frames`` frames and (optionally) write results.

    Failed frames are kept in the report with NaN estimates; a batch never
    aborts on a single frame.
    """
    t0 = time.perf_counter()
    exp = Experiment(config)
    ids = range(config.n_frames)
    if config.workers > 1 and config.n_frames > 1:
        with ProcessPoolExecutor(config.workers, initializer=_init_worker, initargs=(config, exp.calibration)) as pool:
            results = list(pool.map(_work, ids))
    else:
        results = [exp.process(i) for i in ids]
    report = RunReport(
        config=config,
        calibration=exp.calibration,
        estimates=[r[0] for r in results],
        failures={i: r[1] for i, r in zip(ids, results) if r[1] is not None},
        corrupted=tuple(sorted(exp.corrupted)),
    )
    if with_spectrum:
        report.spectrum = spectrum_snapshot(exp.simulate(0)[1])
    report.wall_seconds = time.perf_counter() - t0
    if write:
        write_report(report, config.output_dir)
    return report


def sweep_delay_error(config: ExperimentConfig, offsets, n_frames: int | None = None) -> list[dict]:
    """Mean excess noise and key fraction versus a forced timing offset (samples).

    Each frame is synchronized once; the offsets are then applied to the same
    acquisition, so rows differ only by the timing error.  ``skf_of_mean`` is
    the key fraction at the mean transmittance and excess noise.
    """
    offsets = [int(o) for o in offsets]
    if 0 not in offsets:
        raise InvalidParameter("offsets must include 0")
    exp = Experiment(config)
    rx = exp.receiver()
    per = {o: [] for o in offsets}
    for fid in range(n_frames or config.n_frames):
        tx, record = exp.simulate(fid)
        try:
            acq = exp.acquire(fid, record, rx)
        except CvqkdError:
            continue
        for o in offsets:
            frame = rx.recover(acq, tx.reference_symbols, delay_error=o)
            per[o].append(exp.estimate(tx, frame))
    rows = []
    for o in offsets:
        est = per[o]
        eps = np.array([e.excess_noise_hat for e in est])
        tau = np.array([e.transmittance_hat for e in est])
        rows.append(
            {
                "offset_samples": o,
                "offset_symbols": o / config.layout.sps,
                "mean_excess_mpnu": float(1e3 * eps.mean()) if est else math.nan,
                "sem_excess_mpnu": float(1e3 * eps.std(ddof=1) / math.sqrt(eps.size)) if eps.size > 1 else math.nan,
                "mean_skf": float(np.mean([e.skf for e in est])) if est else math.nan,
                "skf_of_mean": exp.key_fraction(float(tau.mean()), float(eps.mean())) if est else math.nan,
                "n_frames": len(est),
            }
        )
    return rows


SKEW_MODES = {
    "on": ReceiverConfig(),
    "off": ReceiverConfig(skew_compensation=False, residual_phase_correction=False),
    "skew_only_off": ReceiverConfig(skew_compensation=False),
}


def sweep_skew(config: ExperimentConfig, skews, n_frames: int | None = None) -> list[dict]:
    """QPSK BER over the whole frame versus clock skew, with and without digital sync.

    ``off`` disables both the skew correction and the residual-phase
    (M-th power) stage; ``skew_only_off`` disables only the former.  A frame
    whose header is not found counts as BER 0.5.  Frames reuse the same seeds
    at every skew.
    """
    config = replace(config, mode="free-running")
    exp = Experiment(config)
    receivers = {k: exp.receiver(replace(config.receiver, **_mode_flags(v))) for k, v in SKEW_MODES.items()}
    rows = []
    for skew in skews:
        channel = replace(exp.channel, skew=float(skew))
        bers = {k: [] for k in receivers}
        fails = {k: 0 for k in receivers}
        for fid in range(n_frames or config.n_frames):
            tx, record = exp.simulate(fid, channel)
            for k, rx in receivers.items():
                try:
                    frame = rx.acquire(record)
                    bers[k].append(ber(frame.qpsk_bits, tx.qpsk.bits))
                except CvqkdError:
                    fails[k] += 1
                    bers[k].append(0.5)
        n_bits = 2 * config.layout.n_symbols
        row = {"skew": float(skew), "n_frames": len(bers["on"])}
        for k, vals in bers.items():
            p = float(np.mean(vals))
            row[f"ber_{k}"] = p
            # standard error from the frame-to-frame spread; binomial floor for a single frame
            spread = np.std(vals, ddof=1) if len(vals) > 1 else math.sqrt(p * (1 - p) / n_bits)
            row[f"sigma_{k}"] = float(spread / math.sqrt(len(vals)))
            row[f"failed_{k}"] = fails[k]
        rows.append(row)
    return rows


def _mode_flags(cfg: ReceiverConfig) -> dict:
    return {"skew_compensation": cfg.skew_compensation, "residual_phase_correction": cfg.residual_phase_correction}


# -- persistence --------------------------------------------------------------


def summary_dict(report: RunReport) -> dict:
    return {
        "seed": report.config.seed,
        "config": config_to_dict(report.config),
        "config_text": format_config(report.config),
        "calibration": dict(report.calibration.__dict__),
        "aggregates": report.aggregates.as_dict(),
        "failures": {str(k): v for k, v in report.failures.items()},
        "corrupted_frames": list(report.corrupted),
        "wall_seconds": report.wall_seconds,
        "delay_sweep": report.delay_sweep,
    }


def write_report(report: RunReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_estimates(out / ESTIMATES_FILE, report.estimates)
    (out / CONFIG_FILE).write_text(format_config(report.config))
    io.write_json(out / SUMMARY_FILE, summary_dict(report))
    return out


def verify_report(out_dir) -> Aggregates:
    """Recompute aggregates from the CSV and check them against the summary."""
    out = Path(out_dir)
    rows = estimate_rows(io.read_estimates(out / ESTIMATES_FILE))
    # mPNU is the stored unit: take it verbatim rather than through a PNU round trip
    rows = [(r[0], r[1], m, r[3], r[4], r[5]) for r, m in zip(rows, io.read_column(out / ESTIMATES_FILE, 2))]
    agg = aggregate(rows)
    stored = io.read_json(out / SUMMARY_FILE)["aggregates"]
    for k, v in agg.as_dict().items():
        w = stored[k]
        same = (isinstance(v, float) and math.isnan(v) and w is None) or v == w or (
            isinstance(v, float) and isinstance(w, float) and math.isnan(v) and math.isnan(w)
        )
        if not same:
            raise io.FormatError(f"aggregate {k}: CSV gives {v}, summary says {w}")
    return agg


def emit_plots(report: RunReport, out_dir=None, svg: bool = True) -> list[Path]:
    """Two-column data files (and SVG figures when matplotlib is available)."""
    if not report.estimates:
        raise InvalidParameter("report holds no frames")
    out = Path(out_dir or report.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    eps = report.excess_noise_mpnu
    written = []

    path = out / "excess_noise_per_frame.dat"
    io.write_table(path, ("frame_id", "excess_noise_mPNU"), [(e.frame_id, float(x)) for e, x in zip(report.estimates, eps)])
    written.append(path)

    path = out / "ber_vs_excess_noise.dat"
    io.write_table(path, ("excess_noise_mPNU", "ber"), [(float(x), float(e.ber)) for e, x in zip(report.estimates, eps)])
    written.append(path)

    if report.delay_sweep:
        path = out / "delay_sweep.dat"
        io.write_table(
            path,
            ("offset_samples", "mean_excess_mPNU", "skf_of_mean"),
            [(r["offset_samples"], r["mean_excess_mpnu"], r["skf_of_mean"]) for r in report.delay_sweep],
        )
        written.append(path)

    if report.spectrum is not None:
        f, p = report.spectrum
        path = out / "spectrum.dat"
        io.write_table(path, ("frequency_Hz", "psd_dB"), [(float(a), float(10 * np.log10(b))) for a, b in zip(f, p)])
        written.append(path)

    if svg:
        written += _svg_figures(report, out)
    return written


def _svg_figures(report: RunReport, out: Path) -> list[Path]:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return []
    eps = report.excess_noise_mpnu
    ids = [e.frame_id for e in report.estimates]
    written = []

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(ids, eps, ".", ms=3)
    ax.set_xlabel("frame")
    ax.set_ylabel("excess noise (mPNU)")
    fig.tight_layout()
    written.append(out / "excess_noise_per_frame.svg")
    fig.savefig(written[-1])

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(eps, [e.ber for e in report.estimates], ".", ms=3)
    ax.set_xlabel("excess noise (mPNU)")
    ax.set_ylabel("QPSK BER")
    fig.tight_layout()
    written.append(out / "ber_vs_excess_noise.svg")
    fig.savefig(written[-1])

    if report.spectrum is not None:
        f, p = report.spectrum
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(f / 1e6, 10 * np.log10(p), lw=0.6)
        ax.set_xlabel("frequency (MHz)")
        ax.set_ylabel("PSD (dB SNU/Hz)")
        fig.tight_layout()
        written.append(out / "spectrum.svg")
        fig.savefig(written[-1])
    plt.close("all")
    return written
