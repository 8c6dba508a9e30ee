"""Test signals, noise calibration, band-pass filtering, WAV I/O and far-field propagation."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from .geometry import (
    DEFAULT_DISTANCE,
    SPEED_OF_SOUND,
    ArrayGeometry,
    delays,
    wrap_angle,
)

DEFAULT_FS = 48_000.0
FRACDELAY_TAPS = 64
FRACDELAY_BETA = 10.0


class CalibrationError(ValueError):
    """Raised when a signal is too quiet to set an SNR against."""


class WavFormatError(ValueError):
    pass


class SilentSignalWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class MultichannelSignal:
    """M x N real samples at sample rate ``fs``."""

    samples: np.ndarray
    fs: float = DEFAULT_FS
    flags: tuple = ()

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2:
            raise ValueError("samples must be a 1-D or 2-D array")
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", x)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def to_csv(self, path) -> None:
        """Write columns ``t, ch0 .. chM-1``."""
        t = np.arange(self.n_samples) / self.fs
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"ch{i}" for i in range(self.n_channels)])
            for n in range(self.n_samples):
                w.writerow([repr(t[n])] + [repr(v) for v in self.samples[:, n]])


def _n_samples(dur: float, fs: float) -> int:
    if dur <= 0:
        raise ValueError("duration must be positive")
    return int(round(dur * fs))


def gen_sinusoid(f0: float, dur: float, fs: float = DEFAULT_FS, phase: float = 0.0):
    """``sin(2 pi f0 n / fs + phase)``."""
    if not 0 < f0 < fs / 2:
        raise ValueError(f"f0={f0} Hz must lie strictly between 0 and fs/2={fs / 2}")
    n = np.arange(_n_samples(dur, fs))
    return np.sin(2 * np.pi * f0 * n / fs + phase)


def gen_chirp(f_lo: float, f_hi: float, dur: float, fs: float = DEFAULT_FS):
    """Linear sweep from ``f_lo`` at t=0 to ``f_hi`` at t=dur."""
    if not 0 < f_lo < f_hi < fs / 2:
        raise ValueError("need 0 < f_lo < f_hi < fs/2")
    t = np.arange(_n_samples(dur, fs)) / fs
    return sps.chirp(t, f0=f_lo, t1=dur, f1=f_hi, method="linear", phi=-90)


def bandpass_sos(f_lo: float, f_hi: float, fs: float = DEFAULT_FS, order: int = 2):
    if not 0 < f_lo < f_hi < fs / 2:
        raise ValueError("band must lie inside (0, fs/2)")
    return sps.butter(order, [f_lo, f_hi], btype="bandpass", fs=fs, output="sos")


def bandpass(x, f_lo: float, f_hi: float, fs: float = DEFAULT_FS, order: int = 2):
    """Causal Butterworth band-pass along the last axis (cascaded biquads)."""
    return sps.sosfilt(bandpass_sos(f_lo, f_hi, fs, order), x, axis=-1)


def gen_bandnoise(f_lo: float, f_hi: float, dur: float, fs: float = DEFAULT_FS, seed=None):
    """White Gaussian noise through a 2nd-order Butterworth band-pass."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(_n_samples(dur, fs))
    return bandpass(x, f_lo, f_hi, fs)


def _power(x) -> float:
    return float(np.mean(np.square(x)))


def white_noise(shape, power: float, rng) -> np.ndarray:
    """Gaussian noise rescaled so its empirical power is exactly ``power``."""
    z = rng.standard_normal(shape)
    p = np.mean(z**2, axis=-1, keepdims=True)
    return z * np.sqrt(power / p)


def mix_to_snr(x, snr_db: float, seed=None):
    """Add white noise so that ``10 log10(P_signal / P_noise) == snr_db``.

    ``snr_db = inf`` returns a copy of the input.
    """
    x = np.asarray(x, dtype=float)
    if np.isposinf(snr_db):
        return x.copy()
    p = _power(x)
    if p <= 0 or not np.isfinite(p):
        raise CalibrationError("cannot calibrate SNR against a silent signal")
    rng = np.random.default_rng(seed)
    return x + white_noise(x.shape, p / 10 ** (snr_db / 10), rng)


def _kaiser_sinc(frac: float, n_taps: int, beta: float) -> np.ndarray:
    half = n_taps // 2
    k = np.arange(-(half - 1), half + 1)
    t = k - frac
    win = np.i0(beta * np.sqrt(np.clip(1 - (t / half) ** 2, 0, None))) / np.i0(beta)
    return np.sinc(t) * win


def fractional_delay(
    x, delay: float, n_taps: int = FRACDELAY_TAPS, beta: float = FRACDELAY_BETA
):
    """Delay ``x`` by ``delay`` samples with a Kaiser-windowed sinc.

    Output has the input length; samples before the delayed onset are zero.
    Integer delays bypass the interpolator and are exact shifts.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    whole = int(np.floor(delay))
    frac = delay - whole
    out = np.zeros_like(x)
    if frac == 0.0:
        if whole >= 0:
            out[..., whole:] = x[..., : n - whole] if whole < n else 0
        else:
            out[..., : n + whole] = x[..., -whole:]
        return out
    h = _kaiser_sinc(frac, n_taps, beta)
    full = np.convolve(x, h)
    # out[m] = sum_k h_k x[m - whole - k], k in -(half-1)..half
    offset = n_taps // 2 - 1 - whole
    lo, hi = max(0, -offset), min(n, full.size - offset)
    if hi > lo:
        out[lo:hi] = full[lo + offset : hi + offset]
    return out


def propagate(
    src,
    geom: ArrayGeometry,
    theta: float,
    distance: float = DEFAULT_DISTANCE,
    snr_db: float = np.inf,
    seed=None,
    fs: float = DEFAULT_FS,
    c: float = SPEED_OF_SOUND,
    n_taps: int = FRACDELAY_TAPS,
) -> MultichannelSignal:
    """Far-field reception of ``src`` at every mic, plus independent white noise.

    The SNR is set against the power of ``src`` as generated; each channel
    gets its own noise draw. ``theta`` is wrapped into [-pi, pi).
    """
    src = np.asarray(src, dtype=float)
    if src.ndim != 1:
        raise ValueError("source must be a single channel")
    theta = float(wrap_angle(theta))
    tau = delays(geom, theta, distance, c) * fs
    out = np.stack([fractional_delay(src, d, n_taps) for d in tau])
    if not np.isposinf(snr_db):
        p = _power(src)
        if p <= 0:
            raise CalibrationError("cannot calibrate SNR against a silent signal")
        rng = np.random.default_rng(seed)
        out = out + white_noise(out.shape, p / 10 ** (snr_db / 10), rng)
    return MultichannelSignal(out, fs)


def propagation_lead(
    geom: ArrayGeometry,
    distance: float = DEFAULT_DISTANCE,
    fs: float = DEFAULT_FS,
    c: float = SPEED_OF_SOUND,
    n_taps: int = FRACDELAY_TAPS,
) -> int:
    """Samples at the start of a propagated record that are not steady-state."""
    return int(np.ceil((distance + geom.radius) / c * fs)) + n_taps // 2 + 1


def load_wav(path) -> MultichannelSignal:
    """Read a PCM16 or float32 WAV and normalise to peak ``|x| = 1``.

    An all-zero file is returned unnormalised with ``"silent"`` in ``flags``.
    """
    try:
        fs, data = wavfile.read(path)
    except ValueError as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(float) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(float)
    else:
        raise WavFormatError(
            f"{path}: unsupported sample format {data.dtype}; use PCM16 or float32"
        )
    if x.shape[0] == 0:
        raise WavFormatError(f"{path}: file contains no samples")
    x = x.T if x.ndim == 2 else x[None, :]
    peak = np.max(np.abs(x))
    if peak == 0:
        warnings.warn(f"{path}: all-zero audio, normalisation skipped", SilentSignalWarning)
        return MultichannelSignal(x, float(fs), flags=("silent",))
    return MultichannelSignal(x / peak, float(fs))


def save_wav(path, x, fs: float = DEFAULT_FS, fmt: str = "pcm16") -> None:
    """Write M x N (or 1-D) samples; PCM16 clips to [-1, 1)."""
    x = np.asarray(x, dtype=float)
    data = x.T if x.ndim == 2 else x
    if fmt == "pcm16":
        data = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = data.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(path, int(fs), data)


def list_wavs(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"WAV directory {d} does not exist")
    files = sorted(p for p in d.rglob("*") if p.suffix.lower() == ".wav")
    if not files:
        raise FileNotFoundError(f"no .wav files under {d}")
    return files
