"""Robust zero-crossing conjugate (RZCC) event encoding.

Events are robust zero crossings of each in-phase and quadrature channel.
A crossing at sample ``n`` is the first sample of the new sign, so ``+1``
(upward crossing) sits one sample after a local minimum of the cumulative
sum ``y[n] = sum_{m<=n} x[m]`` and ``-1`` one sample after a local maximum.

Two acceptance rules are available, both looking at ``x[n-h .. n+h-1]`` with
``h = w/2``:

``"monotone"``
    every sample before ``n`` has the old sign and every sample from ``n`` on
    has the new sign. Under iid zero-mean noise this fires with probability
    ``2**-w`` per sample and polarity.
``"extremum"``
    ``y[n-1]`` is a strict extremum of ``y`` over the window, i.e. every
    partial sum of ``x`` running away from the crossing keeps its sign. This
    admits every ``"monotone"`` event and more.

Both are evaluated from window-local partial sums, so no global cumulative
sum is formed and there is no drift on long or biased records. In bipolar
encodings a repeated polarity on one channel is dropped, so events alternate.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .signalgen import DEFAULT_FS

MODES = ("bipolar", "unipolar-up", "unipolar-split")
RULES = ("monotone", "extremum")
DEFAULT_WINDOW = 12

_RASTER_MAGIC = b"RZCC\x01"


@dataclass(frozen=True, eq=False)
class SpikeRaster:
    """Dense event raster of shape (C, N) with values in {-1, 0, +1}."""

    data: np.ndarray
    fs: float = DEFAULT_FS
    mode: str = "bipolar"

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim == 1:
            d = d[None, :]
        if d.ndim != 2:
            raise ValueError("raster must be 2-D (channels x samples)")
        if np.any(np.abs(d) > 1):
            raise ValueError("events must lie in {-1, 0, +1}")
        object.__setattr__(self, "data", d.astype(np.int8))

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def events(self, channel: int) -> tuple[np.ndarray, np.ndarray]:
        """Sorted sample indices and polarities for one channel."""
        idx = np.flatnonzero(self.data[channel])
        return idx, self.data[channel, idx].astype(int)

    def counts(self) -> np.ndarray:
        return np.count_nonzero(self.data, axis=1)

    def rate(self) -> np.ndarray:
        """Events per second on each channel."""
        return self.counts() / (self.n_samples / self.fs)

    def to_csv(self, path) -> None:
        ch, idx = np.nonzero(self.data)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["channel", "sample_index", "polarity"])
            for c, n in zip(ch, idx):
                w.writerow([int(c), int(n), int(self.data[c, n])])

    def to_bytes(self) -> bytes:
        """Header then one record per event: u32 channel, u64 index, i8 polarity (LE)."""
        ch, idx = np.nonzero(self.data)
        rec = np.zeros(ch.size, dtype=np.dtype([("c", "<u4"), ("n", "<u8"), ("p", "i1")]))
        rec["c"], rec["n"], rec["p"] = ch, idx, self.data[ch, idx]
        mode = self.mode.encode()
        head = _RASTER_MAGIC + struct.pack(
            "<IQdB", self.n_channels, self.n_samples, self.fs, len(mode)
        )
        return head + mode + struct.pack("<Q", ch.size) + rec.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SpikeRaster":
        if not blob.startswith(_RASTER_MAGIC):
            raise ValueError("not an RZCC raster file")
        off = len(_RASTER_MAGIC)
        n_ch, n_s, fs, n_mode = struct.unpack_from("<IQdB", blob, off)
        off += struct.calcsize("<IQdB")
        mode = blob[off : off + n_mode].decode()
        off += n_mode
        (n_ev,) = struct.unpack_from("<Q", blob, off)
        off += 8
        rec = np.frombuffer(
            blob, dtype=np.dtype([("c", "<u4"), ("n", "<u8"), ("p", "i1")]),
            count=n_ev, offset=off,
        )
        data = np.zeros((n_ch, n_s), dtype=np.int8)
        data[rec["c"], rec["n"]] = rec["p"]
        return cls(data, fs, mode)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SpikeRaster":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def max_window_for_band(f_c: float, fs: float = DEFAULT_FS) -> int:
    """Largest window that still sees every crossing of a tone at ``f_c``."""
    if not 0 < f_c <= fs / 2:
        raise ValueError("f_c must lie in (0, fs/2]")
    return int(np.floor(fs / f_c))


def zero_crossing_events(x) -> np.ndarray:
    """Plain sign-change encoder (+1 up, -1 down), no robustness window."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape, dtype=np.int8)
    prev, cur = x[..., :-1], x[..., 1:]
    out[..., 1:][(prev <= 0) & (cur > 0)] = 1
    out[..., 1:][(prev >= 0) & (cur < 0)] = -1
    return out


def _check_window(w: int) -> int:
    if int(w) != w or w < 2 or w % 2:
        raise ValueError("RZCC window must be an even integer >= 2")
    return int(w)


def _candidates(x: np.ndarray, w: int, rule: str) -> tuple[np.ndarray, np.ndarray]:
    """Boolean (up, down) masks over windows ``x[n-h .. n+h-1]``.

    Row ``k`` of the result corresponds to crossing index ``n = k + h``.
    """
    h = w // 2
    win = sliding_window_view(x, w, axis=-1)
    before, after = win[..., :h], win[..., h:]
    if rule == "monotone":
        up = np.all(before < 0, axis=-1) & np.all(after > 0, axis=-1)
        down = np.all(before > 0, axis=-1) & np.all(after < 0, axis=-1)
    elif rule == "extremum":
        back = np.cumsum(before[..., ::-1], axis=-1)
        fwd = np.cumsum(after, axis=-1)
        up = np.all(back < 0, axis=-1) & np.all(fwd > 0, axis=-1)
        down = np.all(back > 0, axis=-1) & np.all(fwd < 0, axis=-1)
    else:
        raise ValueError(f"unknown RZCC rule {rule!r}")
    return up, down


def _alternate(ev: np.ndarray, last: np.ndarray) -> None:
    """Drop events that repeat the previous polarity, in place, per channel."""
    for c in range(ev.shape[0]):
        idx = np.flatnonzero(ev[c])
        if idx.size == 0:
            continue
        pol = ev[c, idx]
        prev = np.concatenate([[last[c]], pol[:-1]])
        # a run of equal polarities keeps only its first element
        keep = pol != prev
        ev[c, idx[~keep]] = 0
        kept = pol[keep]
        if kept.size:
            last[c] = kept[-1]


def _detect(x: np.ndarray, w: int, rule: str) -> np.ndarray:
    """Events (C, N) for a 2-D real block; last h-1 samples cannot be decided."""
    h = w // 2
    ev = np.zeros(x.shape, dtype=np.int8)
    if x.shape[-1] < w:
        return ev
    up, down = _candidates(x, w, rule)
    ev[:, h : h + up.shape[-1]][up] = 1
    ev[:, h : h + down.shape[-1]][down] = -1
    return ev


def _route(ev: np.ndarray, mode: str) -> np.ndarray:
    if mode == "bipolar":
        return ev
    if mode == "unipolar-up":
        return np.where(ev > 0, ev, 0).astype(np.int8)
    if mode == "unipolar-split":
        return np.concatenate([(ev > 0), (ev < 0)]).astype(np.int8)
    raise ValueError(f"unknown RZCC mode {mode!r}")


def _stack_iq(a) -> np.ndarray:
    i = np.atleast_2d(np.asarray(a.in_phase, dtype=float))
    q = np.atleast_2d(np.asarray(a.quadrature, dtype=float))
    return np.concatenate([i, q])


def rzcc_encode(
    a,
    w: int = DEFAULT_WINDOW,
    mode: str = "bipolar",
    rule: str = "monotone",
    alternate: bool = True,
) -> SpikeRaster:
    """Encode an analytic signal into an event raster.

    ``a`` is an :class:`~hilbertdoa.hilbert.AnalyticSignal` with M channels.
    Output channels are ``[I_0..I_M-1, Q_0..Q_M-1]``; ``"unipolar-split"``
    produces ``[I+, Q+, I-, Q-]`` with unsigned events. A plain 1-D or 2-D
    real array is also accepted and encoded channel by channel.
    """
    w = _check_window(w)
    if mode not in MODES:
        raise ValueError(f"unknown RZCC mode {mode!r}")
    if hasattr(a, "in_phase"):
        x, fs = _stack_iq(a), a.fs
    else:
        x, fs = np.atleast_2d(np.asarray(a, dtype=float)), DEFAULT_FS
    if x.shape[-1] <= w:
        raise ValueError(f"signal has {x.shape[-1]} samples, window is {w}")
    ev = _detect(x, w, rule)
    if alternate:
        _alternate(ev, np.zeros(ev.shape[0], dtype=np.int8))
    return SpikeRaster(_route(ev, mode), fs, mode)


class RzccStream:
    """Chunked RZCC encoder.

    Output lags the input by ``h - 1`` samples (``h = w/2``): a crossing at
    sample ``n`` can only be confirmed after ``x[n+h-1]`` arrives. Concatenated
    outputs equal :func:`rzcc_encode` on the whole record shifted by ``h - 1``.
    """

    def __init__(self, n_channels: int, w: int = DEFAULT_WINDOW,
                 mode: str = "bipolar", rule: str = "monotone", alternate: bool = True):
        self.w = _check_window(w)
        if mode not in MODES:
            raise ValueError(f"unknown RZCC mode {mode!r}")
        if rule not in RULES:
            raise ValueError(f"unknown RZCC rule {rule!r}")
        self.n_channels, self.mode, self.rule, self.alternate = n_channels, mode, rule, alternate
        self.reset()

    def reset(self):
        # w zeros of lookback; zeros never satisfy the strict sign tests
        self._buf = np.zeros((self.n_channels, self.w))
        self._last = np.zeros(self.n_channels, dtype=np.int8)
        self._seen = 0

    def process(self, chunk) -> np.ndarray:
        """Feed (C, n) real samples; returns the routed events for n samples."""
        chunk = np.atleast_2d(np.asarray(chunk, dtype=float))
        if chunk.shape[0] != self.n_channels:
            raise ValueError("channel count mismatch")
        n = chunk.shape[-1]
        buf = np.concatenate([self._buf, chunk], axis=-1)
        # windows ending inside the new samples decide crossings at buf index k+h
        up, down = _candidates(buf[:, 1:], self.w, self.rule)
        up, down = up[:, -n:], down[:, -n:]
        # windows reaching back before the first sample do not exist in batch mode
        early = self._seen - self.w + 1 + np.arange(n) < 0
        up[:, early] = False
        down[:, early] = False
        ev = np.zeros((self.n_channels, n), dtype=np.int8)
        ev[up] = 1
        ev[down] = -1
        if self.alternate:
            _alternate(ev, self._last)
        self._buf = buf[:, -self.w:]
        self._seen += n
        return _route(ev, self.mode)
