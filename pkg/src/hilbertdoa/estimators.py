"""scikit-learn style front ends.

Beamformer design is ``fit(template)``; DoA estimation is ``predict(X)`` on
an (M, N) multichannel record and returns one angle (radians) per window.
``transform(X)`` returns the per-window power over the DoA grid.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .beamform import (
    DEFAULT_BAND,
    DEFAULT_WINDOW_S,
    beam_power,
    design_bank_analytic,
    design_bank_snn,
    snn_front_end,
    spiking_doa,
)
from .geometry import DEFAULT_DISTANCE, ArrayGeometry, DoaGrid
from .hilbert import SthtKernel, analytic_full, stht
from .music import DEFAULT_FRAME, DEFAULT_MUSIC_BAND, DEFAULT_MUSIC_G, MusicConfig, SteeringCache, music_estimate
from .rzcc import DEFAULT_WINDOW, rzcc_encode
from .signalgen import DEFAULT_FS, bandpass
from .snn import DEFAULT_THRESHOLD, LifConfig, membrane_traces


def check_multichannel(X, n_channels: int | None = None, min_samples: int = 2, name: str = "X"):
    """Validate a (channels, samples) float array; 1-D input is one channel."""
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[None, :]
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_min_samples=1,
                    ensure_min_features=min_samples, input_name=name)
    if n_channels is not None and X.shape[0] != n_channels:
        raise ValueError(f"{name} has {X.shape[0]} channels, expected {n_channels}")
    return X


def check_template(x, min_samples: int = 2):
    x = np.asarray(x, dtype=float)
    if x.ndim == 2 and x.shape[0] == 1:
        x = x[0]
    if x.ndim != 1:
        raise ValueError("template must be a single-channel signal")
    return check_multichannel(x, 1, min_samples, "template")[0]


def _geometry(geom):
    return ArrayGeometry.circular() if geom is None else geom


class _BankBeamformer(BaseEstimator):
    """Shared predict/transform for bank-based beamformers."""

    def _window(self):
        return None if self.window_s is None else int(round(self.window_s * self.fs))

    def predict(self, X):
        return self.bank_.grid.angles[np.argmax(self.transform(X), axis=1)]

    def predict_degrees(self, X):
        return np.degrees(self.predict(X))


class HilbertBeamformer(TransformerMixin, _BankBeamformer):
    """Analytic-signal beamformer with SVD-designed complex weights.

    ``analytic`` selects the causal STHT (``"stht"``) or the whole-record
    transform (``"full"``) for both design and estimation.
    """

    def __init__(self, geometry=None, n_grid=449, distance=DEFAULT_DISTANCE, fs=DEFAULT_FS,
                 analytic="stht", kernel_ms=10.0, band=DEFAULT_BAND,
                 window_s=DEFAULT_WINDOW_S, n_jobs=1):
        self.geometry = geometry
        self.n_grid = n_grid
        self.distance = distance
        self.fs = fs
        self.analytic = analytic
        self.kernel_ms = kernel_ms
        self.band = band
        self.window_s = window_s
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        if self.analytic not in ("stht", "full"):
            raise ValueError(f"unknown analytic transform {self.analytic!r}")
        x = check_template(X)
        geom = _geometry(self.geometry)
        self.kernel_ = SthtKernel.from_duration(self.kernel_ms, self.fs)
        self.bank_ = design_bank_analytic(
            x, geom, DoaGrid.uniform(self.n_grid), self.distance, self.fs,
            self.analytic, self.kernel_ if self.analytic == "stht" else None,
            self.band, template_desc="user template", n_jobs=self.n_jobs,
        )
        self.geometry_ = geom
        return self

    def analytic_signal(self, X):
        check_is_fitted(self, "bank_")
        X = check_multichannel(X, self.geometry_.n_mics)
        if self.band is not None:
            X = bandpass(X, self.band[0], self.band[1], self.fs)
        if self.analytic == "stht":
            return stht(X, self.kernel_)
        return analytic_full(X, self.fs)

    def trace(self, X):
        return beam_power(self.analytic_signal(X), self.bank_, self._window())

    def transform(self, X):
        return self.trace(X).power


class SpikingHilbertBeamformer(_BankBeamformer):
    """STHT -> RZCC -> LIF beamformer with real weights over 2M event channels.

    ``readout="membrane"`` uses the mean squared membrane potential of each
    beam neuron (float). ``readout="spiking"`` counts output spikes, optionally
    with 8-bit weights and 16-bit integer state (``quantized=True``).
    """

    def __init__(self, geometry=None, n_grid=449, distance=DEFAULT_DISTANCE, fs=DEFAULT_FS,
                 band=DEFAULT_BAND, kernel_ms=10.0, rzcc_w=DEFAULT_WINDOW, rzcc_mode="bipolar",
                 rzcc_rule="monotone", lif_freq=2000.0, threshold=DEFAULT_THRESHOLD,
                 readout="membrane", quantized=False, window_s=DEFAULT_WINDOW_S, n_jobs=1):
        self.geometry = geometry
        self.n_grid = n_grid
        self.distance = distance
        self.fs = fs
        self.band = band
        self.kernel_ms = kernel_ms
        self.rzcc_w = rzcc_w
        self.rzcc_mode = rzcc_mode
        self.rzcc_rule = rzcc_rule
        self.lif_freq = lif_freq
        self.threshold = threshold
        self.readout = readout
        self.quantized = quantized
        self.window_s = window_s
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        if self.readout not in ("membrane", "spiking"):
            raise ValueError(f"unknown readout {self.readout!r}")
        x = check_template(X)
        geom = _geometry(self.geometry)
        self.kernel_ = SthtKernel.from_duration(self.kernel_ms, self.fs)
        self.lif_ = LifConfig.for_band(self.lif_freq, self.fs, self.threshold)
        self.bank_ = design_bank_snn(
            x, geom, DoaGrid.uniform(self.n_grid), self.distance, self.fs, self.band,
            self.kernel_, self.rzcc_w, self.rzcc_mode, self.rzcc_rule, self.lif_,
            template_desc="user template", n_jobs=self.n_jobs,
        )
        self.geometry_ = geom
        return self

    def encode(self, X):
        check_is_fitted(self, "bank_")
        X = check_multichannel(X, self.geometry_.n_mics)
        return snn_front_end(X, self.fs, self.band, self.kernel_, self.rzcc_w,
                             self.rzcc_mode, self.rzcc_rule)

    def trace(self, X):
        ras = self.encode(X)
        start = self.lif_.settle_samples
        if self.readout == "membrane":
            return beam_power(membrane_traces(ras, self.lif_), self.bank_, self._window(), start)
        tr, self.saturated_ = spiking_doa(ras, self.bank_, self.lif_, self._window(), start,
                                          quantized=self.quantized)
        return tr

    def transform(self, X):
        return self.trace(X).power


class MusicBeamformer(_BankBeamformer):
    """Strongest-bin FFT beamformer; ``fit`` only prepares steering matrices."""

    def __init__(self, geometry=None, frame_len=DEFAULT_FRAME, band=DEFAULT_MUSIC_BAND,
                 n_bins=1, n_grid=DEFAULT_MUSIC_G, fs=DEFAULT_FS, distance=DEFAULT_DISTANCE,
                 frames_per_window=None):
        self.geometry = geometry
        self.frame_len = frame_len
        self.band = band
        self.n_bins = n_bins
        self.n_grid = n_grid
        self.fs = fs
        self.distance = distance
        self.frames_per_window = frames_per_window

    def fit(self, X=None, y=None):
        self.geometry_ = _geometry(self.geometry)
        self.config_ = MusicConfig(self.frame_len, tuple(self.band), self.n_bins,
                                   DoaGrid.uniform(self.n_grid), self.fs, self.distance)
        self.cache_ = SteeringCache(self.geometry_, self.config_)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = check_multichannel(X, self.geometry_.n_mics, self.frame_len)
        return music_estimate(X, self.geometry_, self.config_, self.frames_per_window,
                              self.cache_).power

    def predict(self, X):
        return self.config_.grid.angles[np.argmax(self.transform(X), axis=1)]


class SthtTransformer(TransformerMixin, BaseEstimator):
    """Causal STHT; ``transform`` returns the complex analytic signal (M, N)."""

    def __init__(self, kernel_ms=4.0, fs=DEFAULT_FS, method="fft"):
        self.kernel_ms = kernel_ms
        self.fs = fs
        self.method = method

    def fit(self, X=None, y=None):
        self.kernel_ = SthtKernel.from_duration(self.kernel_ms, self.fs)
        self.valid_from_ = self.kernel_.W - 1
        return self

    def transform(self, X):
        check_is_fitted(self, "kernel_")
        X = check_multichannel(X, min_samples=self.kernel_.W + 1)
        return stht(X, self.kernel_, self.method).complex


class RzccEncoder(TransformerMixin, BaseEstimator):
    """RZCC events of complex analytic input (M, N) -> int8 raster (2M or 4M, N)."""

    def __init__(self, w=DEFAULT_WINDOW, mode="bipolar", rule="monotone", fs=DEFAULT_FS):
        self.w = w
        self.mode = mode
        self.rule = rule
        self.fs = fs

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        from .hilbert import AnalyticSignal

        Z = np.atleast_2d(np.asarray(X))
        if not np.iscomplexobj(Z):
            Z = check_multichannel(Z)
            return rzcc_encode(Z, self.w, self.mode, self.rule).data
        if not np.all(np.isfinite(Z)):
            raise ValueError("input contains non-finite values")
        a = AnalyticSignal(Z.real, Z.imag, self.fs)
        return rzcc_encode(a, self.w, self.mode, self.rule).data
