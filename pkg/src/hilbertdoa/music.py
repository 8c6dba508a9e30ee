"""FFT-bin beamforming baseline ("music-baseline").

Per frame, pick the strongest DFT bin inside the band, project the array
snapshot at that bin onto the narrowband steering vectors, and accumulate
``|A^H x|^2`` across frames. This is the simplified power-spectrum variant,
not noise-subspace MUSIC.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .beamform import DoaTrace
from .geometry import (
    DEFAULT_DISTANCE,
    SPEED_OF_SOUND,
    ArrayGeometry,
    DoaGrid,
    steering_matrix,
)
from .signalgen import DEFAULT_FS

DEFAULT_FRAME = 2048
PRESET_FRAME_50MS = 2400
DEFAULT_MUSIC_BAND = (1600.0, 2400.0)
DEFAULT_MUSIC_G = 225


@dataclass(frozen=True, eq=False)
class MusicConfig:
    frame_len: int = DEFAULT_FRAME
    band: tuple = DEFAULT_MUSIC_BAND
    n_bins: int = 1
    grid: DoaGrid = field(default_factory=lambda: DoaGrid.uniform(DEFAULT_MUSIC_G))
    fs: float = DEFAULT_FS
    distance: float = DEFAULT_DISTANCE
    c: float = SPEED_OF_SOUND

    def __post_init__(self):
        if self.frame_len < 2:
            raise ValueError("frame length must be at least 2")
        lo, hi = self.band
        if not 0 < lo < hi < self.fs / 2:
            raise ValueError("band must lie inside (0, fs/2)")
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        if self.band_bins().size == 0:
            raise ValueError(
                f"band {self.band} Hz contains no DFT bin for N={self.frame_len}"
            )

    def band_bins(self) -> np.ndarray:
        f = np.fft.rfftfreq(self.frame_len, 1 / self.fs)
        return np.flatnonzero((f >= self.band[0]) & (f <= self.band[1]))

    @classmethod
    def preset_50ms(cls, **kw) -> "MusicConfig":
        return cls(frame_len=PRESET_FRAME_50MS, **kw)


class SteeringCache:
    """Steering matrices per DFT bin for one geometry/grid/config."""

    def __init__(self, geom: ArrayGeometry, cfg: MusicConfig):
        self.geom, self.cfg = geom, cfg
        self._cache: dict[int, np.ndarray] = {}

    def __call__(self, k: int) -> np.ndarray:
        if k not in self._cache:
            f = k * self.cfg.fs / self.cfg.frame_len
            self._cache[k] = steering_matrix(
                self.geom, f, self.cfg.grid, self.cfg.distance, self.cfg.c
            )
        return self._cache[k]


def frame_powers(x, geom: ArrayGeometry, cfg: MusicConfig, cache: SteeringCache | None = None):
    """Per-frame power vectors (K, G) over non-overlapping rectangular frames."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[0] != geom.n_mics:
        raise ValueError(f"input has {X.shape[0]} channels, array has {geom.n_mics}")
    N = cfg.frame_len
    n_frames = X.shape[1] // N
    if n_frames < 1:
        raise ValueError(f"signal shorter than one frame ({N} samples)")
    cache = cache or SteeringCache(geom, cfg)
    bins = cfg.band_bins()
    frames = X[:, : n_frames * N].reshape(X.shape[0], n_frames, N)
    spec = np.fft.rfft(frames, axis=-1)[:, :, bins]  # (M, K, B)
    bin_power = np.sum(np.abs(spec) ** 2, axis=0)  # (K, B)
    P = np.zeros((n_frames, cfg.grid.size))
    n_keep = min(cfg.n_bins, bins.size)
    for t in range(n_frames):
        best = np.argsort(-bin_power[t], kind="stable")[:n_keep]
        for b in best:
            A = cache(int(bins[b]))
            P[t] += np.abs(A.conj().T @ spec[:, t, b]) ** 2
    return P


def music_power(x, geom: ArrayGeometry, cfg: MusicConfig = MusicConfig(), cache=None) -> np.ndarray:
    """Power vector accumulated over all frames."""
    return frame_powers(x, geom, cfg, cache).sum(axis=0)


def music_estimate(
    x,
    geom: ArrayGeometry,
    cfg: MusicConfig = MusicConfig(),
    frames_per_window: int | None = None,
    cache=None,
) -> DoaTrace:
    """DoA trace; one window over the whole record unless ``frames_per_window``."""
    P = frame_powers(x, geom, cfg, cache)
    k = P.shape[0] if frames_per_window is None else frames_per_window
    if k < 1:
        raise ValueError("frames_per_window must be >= 1")
    starts = list(range(0, P.shape[0] - k + 1, k)) or [0]
    power = np.stack([P[s : s + k].sum(axis=0) for s in starts])
    t0 = np.array(starts) * cfg.frame_len / cfg.fs
    return DoaTrace(power, cfg.grid, t0)


@dataclass(frozen=True)
class NarrowbandValidity:
    frame_len: int
    fs: float
    freq: float
    delta_f: float
    ratio: float
    valid: bool
    min_frame_len: int


def narrowband_validity(N: int, fs: float, f: float, tol: float = 0.01) -> NarrowbandValidity:
    """Frequency resolution ``fs/N`` relative to ``f``; flags ratios above ``tol``."""
    if f <= 0 or N < 1 or fs <= 0:
        raise ValueError("need f > 0, N >= 1, fs > 0")
    df = fs / N
    ratio = df / f
    # small slack so that exactly-at-tolerance configurations count as valid
    valid = ratio <= tol * (1 + 1e-12)
    return NarrowbandValidity(N, fs, f, df, ratio, valid, int(np.ceil(fs / (tol * f) - 1e-9)))
