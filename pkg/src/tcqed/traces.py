"""Sampled transmission data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _strictly_increasing(x: np.ndarray) -> bool:
    return bool(np.all(np.diff(x) > 0))


@dataclass(frozen=True, eq=False)
class TransmissionTrace:
    """Complex S21 versus probe frequency (GHz) at one bias point.

    ``bias_current`` is the current (A) of the swept coil, written to the
    ``bias_current_A`` CSV column; the full bias snapshot goes in ``meta``.
    """

    probe_freq: np.ndarray
    s21: np.ndarray
    bias_current: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.probe_freq, dtype=float).ravel()
        s = np.asarray(self.s21, dtype=complex).ravel()
        if f.shape != s.shape:
            raise ValueError(f"probe_freq and s21 lengths differ ({f.size} vs {s.size})")
        if not _strictly_increasing(f):
            raise ValueError("probe frequencies must be strictly increasing")
        object.__setattr__(self, "probe_freq", f)
        object.__setattr__(self, "s21", s)
        object.__setattr__(self, "bias_current", float(self.bias_current))

    def __len__(self) -> int:
        return self.probe_freq.size

    def replace_s21(self, s21, **meta) -> TransmissionTrace:
        return TransmissionTrace(self.probe_freq, s21, self.bias_current, {**self.meta, **meta})


@dataclass(frozen=True, eq=False)
class SpectrumMap:
    """S21 on a (bias current, probe frequency) grid; ``s21[i, j]`` is bias ``i``, frequency ``j``."""

    bias_current: np.ndarray
    probe_freq: np.ndarray
    s21: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        b = np.asarray(self.bias_current, dtype=float).ravel()
        f = np.asarray(self.probe_freq, dtype=float).ravel()
        s = np.asarray(self.s21, dtype=complex)
        if s.shape != (b.size, f.size):
            raise ValueError(f"s21 shape {s.shape} does not match grid ({b.size}, {f.size})")
        if not _strictly_increasing(f):
            raise ValueError("probe frequencies must be strictly increasing")
        object.__setattr__(self, "bias_current", b)
        object.__setattr__(self, "probe_freq", f)
        object.__setattr__(self, "s21", s)

    def traces(self) -> list[TransmissionTrace]:
        return [TransmissionTrace(self.probe_freq, row, b, dict(self.meta)) for b, row in zip(self.bias_current, self.s21)]

    @classmethod
    def from_traces(cls, traces, meta=None) -> SpectrumMap:
        traces = list(traces)
        if not traces:
            raise ValueError("need at least one trace")
        f = traces[0].probe_freq
        for t in traces[1:]:
            if not np.array_equal(t.probe_freq, f):
                raise ValueError("all traces must share one probe grid")
        return cls([t.bias_current for t in traces], f, np.vstack([t.s21 for t in traces]), meta or {})
