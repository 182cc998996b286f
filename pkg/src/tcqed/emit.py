"""CSV, SVG and run-manifest output.

Floats are written with ``repr`` so that reading a CSV back reproduces the
in-memory values bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .traces import SpectrumMap, TransmissionTrace

TRACE_COLUMNS = ("bias_current_A", "probe_freq_GHz", "s21_re", "s21_im", "s21_abs")
SQRTN_COLUMNS = ("N", "splitting_MHz", "splitting_pred_MHz", "drift_MHz", "signal_strength")


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_table(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"row has {len(row)} cells, expected {len(columns)}")
            w.writerow([_cell(x) for x in row])
    return path


def read_table(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def _trace_rows(traces: Sequence[TransmissionTrace]):
    for t in traces:
        for f, s in zip(t.probe_freq, t.s21):
            yield (t.bias_current, float(f), float(s.real), float(s.imag), float(abs(s)))


def write_traces(path: str | Path, data) -> Path:
    """Write a trace, a list of traces or a :class:`SpectrumMap` (one row per sample)."""
    if isinstance(data, TransmissionTrace):
        traces = [data]
    elif isinstance(data, SpectrumMap):
        traces = data.traces()
    else:
        traces = list(data)
    return write_table(path, TRACE_COLUMNS, _trace_rows(traces))


def read_traces(path: str | Path) -> list[TransmissionTrace]:
    """Traces from a trace CSV; consecutive rows with the same bias current form one trace."""
    header, rows = read_table(path)
    if tuple(header) != TRACE_COLUMNS:
        raise ValueError(f"unexpected trace columns {header}")
    traces = []
    block: list[list[str]] = []
    for row in rows + [None]:
        if block and (row is None or row[0] != block[-1][0]):
            arr = np.array([[float(x) for x in r[1:4]] for r in block])
            traces.append(TransmissionTrace(arr[:, 0], arr[:, 1] + 1j * arr[:, 2], float(block[0][0])))
            block = []
        if row is not None:
            block.append(row)
    return traces


def read_map(path: str | Path) -> SpectrumMap:
    return SpectrumMap.from_traces(read_traces(path))


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# SVG


def _scale(v, lo, hi, a, b):
    return a + (b - a) * (v - lo) / (hi - lo if hi != lo else 1.0)


def _colour(t: float) -> str:
    # dark blue -> yellow
    t = float(np.clip(t, 0, 1))
    r = int(30 + 225 * t)
    g = int(20 + 210 * t**0.8)
    b = int(90 + 40 * (1 - t) - 60 * t)
    return f"#{r:02x}{g:02x}{max(b, 0):02x}"


def _axes(x0, y0, w, h, xr, yr, xlabel, ylabel) -> list[str]:
    out = [f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="black"/>']
    for k in range(5):
        fx = xr[0] + (xr[1] - xr[0]) * k / 4
        fy = yr[0] + (yr[1] - yr[0]) * k / 4
        px = _scale(fx, *xr, x0, x0 + w)
        py = _scale(fy, *yr, y0 + h, y0)
        out.append(f'<text x="{px:.1f}" y="{y0 + h + 16}" font-size="10" text-anchor="middle">{fx:.4g}</text>')
        out.append(f'<text x="{x0 - 6}" y="{py + 3:.1f}" font-size="10" text-anchor="end">{fy:.4g}</text>')
    out.append(f'<text x="{x0 + w / 2}" y="{y0 + h + 34}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{y0 + h / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {y0 + h / 2})">{escape(ylabel)}</text>')
    return out


def _svg(body: list[str], width=640, height=440, title="") -> str:
    head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">', '<rect width="100%" height="100%" fill="white"/>']
    if title:
        head.append(f'<text x="{width / 2}" y="18" font-size="13" text-anchor="middle">{escape(title)}</text>')
    return "\n".join(head + body + ["</svg>"]) + "\n"


def write_heatmap_svg(path: str | Path, x, y, z, *, xlabel="x", ylabel="y", title="",
                      overlays: Sequence[tuple[np.ndarray, np.ndarray]] = (), log: bool = False) -> Path:
    """Heatmap of ``z[i, j]`` at ``(x[i], y[j])`` with optional polyline overlays."""
    x, y, z = np.asarray(x, float), np.asarray(y, float), np.asarray(z, float)
    if z.shape != (x.size, y.size):
        raise ValueError(f"z shape {z.shape} does not match grid ({x.size}, {y.size})")
    x0, y0, w, h = 70, 30, 540, 360
    zz = np.log10(np.maximum(z, 1e-12)) if log else z
    lo, hi = np.nanmin(zz), np.nanmax(zz)
    # decimate to at most 200 x 200 cells
    si = max(1, x.size // 200)
    sj = max(1, y.size // 200)
    xs, ys, zs = x[::si], y[::sj], zz[::si, ::sj]
    cw = w / xs.size
    ch = h / ys.size
    body = []
    for i in range(xs.size):
        for j in range(ys.size):
            t = (zs[i, j] - lo) / (hi - lo) if hi > lo else 0.0
            body.append(f'<rect x="{x0 + i * cw:.2f}" y="{y0 + h - (j + 1) * ch:.2f}" width="{cw + 0.3:.2f}" '
                        f'height="{ch + 0.3:.2f}" fill="{_colour(t)}"/>')
    xr, yr = (x[0], x[-1]), (y[0], y[-1])
    for ox, oy in overlays:
        pts = " ".join(f"{_scale(a, *xr, x0, x0 + w):.1f},{_scale(b, *yr, y0 + h, y0):.1f}"
                       for a, b in zip(ox, oy) if yr[0] <= b <= yr[1])
        if pts:
            body.append(f'<polyline points="{pts}" fill="none" stroke="white" stroke-dasharray="4,3" stroke-width="1"/>')
    body += _axes(x0, y0, w, h, xr, yr, xlabel, ylabel)
    path = Path(path)
    path.write_text(_svg(body, title=title))
    return path


def write_lines_svg(path: str | Path, x, series: dict, *, xlabel="x", ylabel="y", title="") -> Path:
    """Line plot of named series sharing one x axis."""
    x = np.asarray(x, float)
    x0, y0, w, h = 70, 30, 540, 360
    ys = [np.asarray(v, float) for v in series.values()]
    lo = min(np.nanmin(v) for v in ys)
    hi = max(np.nanmax(v) for v in ys)
    xr, yr = (x.min(), x.max()), (lo, hi)
    palette = ["#1f4e9c", "#c0392b", "#27ae60", "#8e44ad", "#d68910", "#17a589"]
    body = []
    for k, (name, v) in enumerate(series.items()):
        c = palette[k % len(palette)]
        pts = " ".join(f"{_scale(a, *xr, x0, x0 + w):.1f},{_scale(b, *yr, y0 + h, y0):.1f}"
                       for a, b in zip(x, v) if np.isfinite(b))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="1.5"/>')
        body.append(f'<text x="{x0 + w - 4}" y="{y0 + 14 + 14 * k}" font-size="11" fill="{c}" '
                    f'text-anchor="end">{escape(str(name))}</text>')
    body += _axes(x0, y0, w, h, xr, yr, xlabel, ylabel)
    path = Path(path)
    path.write_text(_svg(body, title=title))
    return path


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    scenario: str
    config_hash: str
    seed: int
    version: str = __version__
    wall_clock_s: float = 0.0
    files: list[dict] = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    spec: dict = field(default_factory=dict)

    def add(self, path: Path, root: Path):
        path = Path(path)
        self.files.append({"path": str(path.relative_to(root)), "sha256": file_sha256(path),
                           "bytes": path.stat().st_size})

    def write(self, root: str | Path) -> Path:
        path = Path(root) / f"{self.scenario}_manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path: str | Path) -> RunManifest:
        return cls(**json.loads(Path(path).read_text()))


def check_manifest(path: str | Path) -> list[str]:
    """Files whose current checksum differs from the manifest (or that are missing)."""
    path = Path(path)
    m = RunManifest.read(path)
    bad = []
    for entry in m.files:
        f = path.parent / entry["path"]
        if not f.exists() or file_sha256(f) != entry["sha256"]:
            bad.append(entry["path"])
    return bad


class Stopwatch:
    def __init__(self):
        self.t0 = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0
