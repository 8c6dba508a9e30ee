"""Discrete analytic signal, short-time Hilbert transform (STHT) and phase tools."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .signalgen import DEFAULT_FS

ENVELOPE_EPS = 1e-12


class SignalTooShortError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AnalyticSignal:
    """In-phase / quadrature pair; arrays may be (N,) or (M, N).

    ``valid_from`` is the first sample past the filter transient.
    ``held`` marks samples whose phase was held by :func:`envelope_phase`.
    """

    in_phase: np.ndarray
    quadrature: np.ndarray
    fs: float = DEFAULT_FS
    valid_from: int = 0
    flags: tuple = field(default=())

    def __post_init__(self):
        i = np.asarray(self.in_phase, dtype=float)
        q = np.asarray(self.quadrature, dtype=float)
        if i.shape != q.shape:
            raise ValueError("in-phase and quadrature must have equal shapes")
        object.__setattr__(self, "in_phase", i)
        object.__setattr__(self, "quadrature", q)

    @property
    def n_samples(self) -> int:
        return self.in_phase.shape[-1]

    @property
    def complex(self) -> np.ndarray:
        return self.in_phase + 1j * self.quadrature

    def valid(self) -> "AnalyticSignal":
        """Copy restricted to samples past ``valid_from``."""
        s = slice(self.valid_from, None)
        return AnalyticSignal(
            self.in_phase[..., s], self.quadrature[..., s], self.fs, 0, self.flags
        )


def analytic_mask(n: int) -> np.ndarray:
    """DFT weights that map X[k] to the analytic spectrum X_a[k].

    Odd N keeps DC and doubles bins 1..(N-1)/2. Even N doubles bins 0..N/2-1,
    which leaves the real part at DC unchanged once the real part of the
    result is replaced by the input, and treats the Nyquist bin as positive.
    """
    u = np.zeros(n)
    if n % 2:
        u[0] = 1.0
        u[1 : (n + 1) // 2] = 2.0
    else:
        u[: n // 2] = 2.0
    return u


def analytic_full(x, fs: float = DEFAULT_FS) -> AnalyticSignal:
    """Infinite-window (whole-record) analytic signal along the last axis."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if n < 2:
        raise ValueError("need at least 2 samples")
    xa = np.fft.ifft(np.fft.fft(x, axis=-1) * analytic_mask(n), axis=-1)
    return AnalyticSignal(x.copy(), xa.imag, fs)


@dataclass(frozen=True, eq=False)
class SthtKernel:
    """Odd-length FIR approximation of the Hilbert transform."""

    taps: np.ndarray
    fs: float = DEFAULT_FS

    def __post_init__(self):
        h = np.array(self.taps, dtype=float).ravel()
        if h.size < 3 or h.size % 2 == 0:
            raise ValueError("STHT kernel length must be odd and at least 3")
        h.setflags(write=False)
        object.__setattr__(self, "taps", h)

    @property
    def W(self) -> int:
        return self.taps.size

    @property
    def delay(self) -> int:
        return (self.W - 1) // 2

    @property
    def duration(self) -> float:
        return (self.W - 1) / self.fs

    @classmethod
    def from_duration(cls, ms: float, fs: float = DEFAULT_FS) -> "SthtKernel":
        """Kernel spanning ``ms`` milliseconds: W = round(T fs) + 1 (made odd)."""
        w = int(round(ms * 1e-3 * fs))
        w += 1 if w % 2 == 0 else 2
        return stht_kernel(w, fs)

    def response(self, freqs) -> np.ndarray:
        """Complex frequency response, phase-referenced to the kernel centre."""
        freqs = np.asarray(freqs, dtype=float)
        n = np.arange(self.W) - self.delay
        return np.exp(-2j * np.pi * np.outer(freqs / self.fs, n)) @ self.taps

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "tap"])
            for k, v in enumerate(self.taps):
                w.writerow([k, repr(float(v))])

    @classmethod
    def from_csv(cls, path, fs: float = DEFAULT_FS) -> "SthtKernel":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(np.array([float(r["tap"]) for r in rows]), fs)


def stht_kernel(W: int, fs: float = DEFAULT_FS) -> SthtKernel:
    """Imaginary part of the analytic signal of a centred W-sample delta."""
    if int(W) != W or W < 3:
        raise ValueError("W must be an integer >= 3")
    W = int(W)
    if W % 2 == 0:
        raise ValueError(f"W={W} is even; the kernel needs a centre tap")
    delta = np.zeros(W)
    delta[(W - 1) // 2] = 1.0
    h = analytic_full(delta, fs).quadrature
    # enforce exact antisymmetry and a zero centre tap
    h = 0.5 * (h - h[::-1])
    return SthtKernel(h, fs)


def _direct_fir(x: np.ndarray, h: np.ndarray, state: np.ndarray | None = None):
    """Causal FIR by accumulating one tap at a time.

    The accumulation order depends only on the tap index, so any split of the
    input into chunks gives bit-identical output when ``state`` (the last
    W-1 input samples) is carried across.
    """
    W = h.size
    if state is None:
        state = np.zeros(x.shape[:-1] + (W - 1,))
    buf = np.concatenate([state, x], axis=-1)
    n = x.shape[-1]
    y = np.zeros(x.shape)
    for k in range(W):
        if h[k] != 0.0:
            y += h[k] * buf[..., W - 1 - k : W - 1 - k + n]
    return y, buf[..., buf.shape[-1] - (W - 1) :]


def stht(x, kernel: SthtKernel, method: str = "fft") -> AnalyticSignal:
    """Causal STHT of the last axis of ``x``.

    ``quadrature[n] = sum_k h[k] x[n-k]`` and ``in_phase`` is ``x`` delayed by
    ``(W-1)/2`` so the two components line up. ``method="direct"`` is slower
    but matches :class:`SthtStream` bit for bit.
    """
    x = np.asarray(x, dtype=float)
    W = kernel.W
    if x.shape[-1] <= W:
        raise SignalTooShortError(
            f"signal has {x.shape[-1]} samples but the STHT window is {W}"
        )
    if method == "fft":
        q = sps.oaconvolve(x, kernel.taps.reshape((1,) * (x.ndim - 1) + (-1,)), axes=-1)
        q = q[..., : x.shape[-1]]
    elif method == "direct":
        q, _ = _direct_fir(x, kernel.taps)
    else:
        raise ValueError(f"unknown STHT method {method!r}")
    d = kernel.delay
    i = np.zeros_like(x)
    i[..., d:] = x[..., : x.shape[-1] - d]
    return AnalyticSignal(i, q, kernel.fs, W - 1)


class SthtStream:
    """Chunked STHT with carried FIR state; one instance per stream."""

    def __init__(self, kernel: SthtKernel, n_channels: int | None = None):
        self.kernel = kernel
        self.n_channels = n_channels
        self.reset()

    def reset(self):
        shape = () if self.n_channels is None else (self.n_channels,)
        self._state = np.zeros(shape + (self.kernel.W - 1,))
        self.n_seen = 0

    def process(self, chunk) -> tuple[np.ndarray, np.ndarray]:
        """Return (in_phase, quadrature) for this chunk."""
        chunk = np.asarray(chunk, dtype=float)
        q, new_state = _direct_fir(chunk, self.kernel.taps, self._state)
        d = self.kernel.delay
        buf = np.concatenate([self._state, chunk], axis=-1)
        start = buf.shape[-1] - chunk.shape[-1] - d
        i = buf[..., start : start + chunk.shape[-1]].copy()
        self._state = new_state
        self.n_seen += chunk.shape[-1]
        return i, q


def envelope_phase(a: AnalyticSignal, eps: float = ENVELOPE_EPS):
    """Envelope and unwrapped phase.

    Samples with envelope below ``eps`` have no defined phase; their phase is
    held from the previous sample and they are returned in the ``held`` mask.
    Returns ``(envelope, phase, held)``.
    """
    i, q = a.in_phase, a.quadrature
    e = np.hypot(i, q)
    raw = np.arctan2(q, i)
    held = e < eps
    if np.any(held):
        raw = raw.copy()
        # carry the last defined phase forward; leading undefined samples get 0
        idx = np.where(~held, np.arange(raw.shape[-1]), 0)
        idx = np.maximum.accumulate(idx, axis=-1)
        raw = np.take_along_axis(raw, idx, axis=-1)
        lead = np.cumsum(~held, axis=-1) == 0
        raw[lead] = 0.0
    # arctan2 gives [-pi, pi]; move the start into (-pi, pi]
    return e, np.unwrap(raw, axis=-1), held


def phase_slope(phase, fs: float = DEFAULT_FS, start: int = 0, stop: int | None = None):
    """Least-squares slope of ``phase`` in rad/s over ``[start, stop)``."""
    p = np.asarray(phase, dtype=float)[start:stop]
    if p.size < 2:
        raise ValueError("need at least two phase samples")
    t = np.arange(p.size) / fs
    return float(np.polyfit(t, p, 1)[0])


def spectral_mean_freq(x, fs: float = DEFAULT_FS) -> float:
    """Energy-weighted mean of the one-sided spectrum, in Hz."""
    x = np.asarray(x, dtype=float)
    p = np.abs(np.fft.rfft(x)) ** 2
    total = p.sum()
    if total <= 0:
        raise ValueError("spectral mean frequency is undefined for a zero signal")
    f = np.fft.rfftfreq(x.size, 1 / fs)
    return float(np.dot(f, p) / total)
