"""Text and image outputs: binary PGM heatmaps, CSV tables, JSON timing lines."""
from __future__ import annotations

import csv
import io
import json

import numpy as np

from .redundancy import SpectrumReport


def heatmap_bytes(M: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to uint8 with ``floor(255 v + 0.5)`` (ties round up)."""
    M = np.asarray(M, dtype=np.float64)
    if M.size and (M.min() < 0 or M.max() > 1):
        raise ValueError("heatmap values must lie in [0, 1]")
    return np.floor(255.0 * M + 0.5).astype(np.uint8)


def write_pgm(M: np.ndarray) -> bytes:
    """8-bit binary PGM (P5). Header is ``P5\\n<width> <height>\\n255\\n``."""
    px = heatmap_bytes(M)
    h, w = px.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes(order="C")


def read_pgm(buf: bytes) -> np.ndarray:
    parts = buf.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise ValueError("not an 8-bit P5 PGM written by write_pgm")
    w, h = (int(x) for x in parts[1].split())
    data = np.frombuffer(parts[3], dtype=np.uint8)
    if data.size != w * h:
        raise ValueError("PGM payload size mismatch")
    return data.reshape(h, w)


def spectrum_csv(report: SpectrumReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m", "lambda", "E"])
    for m, (lam, e) in enumerate(zip(report.eigenvalues, report.cumulative), start=1):
        w.writerow([m, repr(float(lam)), f"{e:.6f}"])
    return buf.getvalue()


def matrix_csv(M: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in np.asarray(M):
        w.writerow(["nan" if np.isnan(v) else repr(float(v)) for v in row])
    return buf.getvalue()


def timing_line(component: str, samples_ns, **extra) -> str:
    samples = np.asarray(samples_ns, dtype=np.int64)
    rec = {"component": component, "median_ns": int(np.median(samples)),
           "mean_ns": float(samples.mean()), "runs": int(samples.size)}
    rec.update(extra)
    return json.dumps(rec, sort_keys=False)
