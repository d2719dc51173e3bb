"""File formats: waveform binary, Alice's symbol CSV, per-frame estimates CSV, run summary."""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import CvqkdError
from .param_est import FrameEstimate
from .signal_core import ComplexSeries

WAVEFORM_MAGIC = b"CVQKDWAV".ljust(16, b"\0")
WAVEFORM_VERSION = 1
_HEADER = struct.Struct("<IdQ")  # version, sample_rate, length

ESTIMATE_COLUMNS = ("frame_id", "transmittance_hat", "excess_noise_mPNU", "ber", "skf_bits_per_symbol", "accepted")
SYMBOL_COLUMNS = ("frame_id", "index", "kind", "real", "imag")


class FormatError(CvqkdError):
    """A file does not follow the expected layout."""


def write_waveform(path, x: ComplexSeries) -> None:
    iq = np.empty(2 * len(x), dtype="<f4")
    iq[0::2] = x.samples.real
    iq[1::2] = x.samples.imag
    with open(path, "wb") as fh:
        fh.write(WAVEFORM_MAGIC)
        fh.write(_HEADER.pack(WAVEFORM_VERSION, float(x.sample_rate), len(x)))
        fh.write(iq.tobytes())


def read_waveform(path) -> ComplexSeries:
    data = Path(path).read_bytes()
    if data[:16] != WAVEFORM_MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, rate, n = _HEADER.unpack_from(data, 16)
    if version != WAVEFORM_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    iq = np.frombuffer(data, dtype="<f4", offset=16 + _HEADER.size)
    if iq.size != 2 * n:
        raise FormatError(f"{path}: expected {n} samples, found {iq.size // 2}")
    return ComplexSeries(iq[0::2].astype(np.float64) + 1j * iq[1::2].astype(np.float64), rate)


def _fmt(x: float) -> str:
    # repr round-trips doubles exactly; NaN marks a frame that produced no estimate
    return "nan" if math.isnan(x) else repr(float(x))


def write_symbols(path, frames) -> None:
    """Alice's truth data; ``frames`` yields TxFrame objects."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SYMBOL_COLUMNS)
        for tx in frames:
            parts = (("ref", tx.reference_symbols), ("key", tx.quantum.values), ("qpsk", tx.qpsk.symbols))
            for kind, values in parts:
                for i, v in enumerate(values):
                    w.writerow((tx.frame_id, i, kind, _fmt(v.real), _fmt(v.imag)))


def read_symbols(path) -> dict[int, dict[str, np.ndarray]]:
    out: dict[int, dict[str, list]] = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if tuple(next(r, ())) != SYMBOL_COLUMNS:
            raise FormatError(f"{path}: unexpected header")
        for frame_id, index, kind, re_, im_ in r:
            out.setdefault(int(frame_id), {}).setdefault(kind, []).append(complex(float(re_), float(im_)))
    return {k: {kind: np.array(v) for kind, v in d.items()} for k, d in out.items()}


def write_estimates(path, estimates) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESTIMATE_COLUMNS)
        for e in estimates:
            w.writerow(
                (
                    e.frame_id,
                    _fmt(e.transmittance_hat),
                    _fmt(1e3 * e.excess_noise_hat),
                    _fmt(e.ber),
                    _fmt(e.skf),
                    int(e.accepted),
                )
            )


def read_estimates(path) -> list[FrameEstimate]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if tuple(next(r, ())) != ESTIMATE_COLUMNS:
            raise FormatError(f"{path}: unexpected header")
        return [
            FrameEstimate(
                frame_id=int(fid),
                transmittance_hat=float(tau),
                excess_noise_hat=float(eps) / 1e3,
                ber=float(b),
                skf=float(skf),
                accepted=bool(int(acc)),
            )
            for fid, tau, eps, b, skf, acc in r
        ]


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_table(path, header, rows) -> None:
    """Plot-ready whitespace-separated columns with a commented header."""
    with open(path, "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for row in rows:
            fh.write(" ".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def read_column(path, index: int) -> list[float]:
    """One numeric column of a CSV, parsed verbatim."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r, None)
        return [float(row[index]) for row in r]
