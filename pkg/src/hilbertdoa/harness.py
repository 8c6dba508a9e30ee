"""Experiment runner: MAE sweeps, DoA smoothing, beam-pattern export,
resource and power calculators, run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import subprocess
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .beamform import (
    DEFAULT_BAND,
    BeamformerBank,
    beam_power,
    beam_pattern,
    beam_pattern_sweep,
    snn_front_end,
    spiking_doa,
)
from .geometry import DEFAULT_DISTANCE, ArrayGeometry, wrap_angle
from .hilbert import SthtKernel, stht
from .music import MusicConfig, SteeringCache, music_estimate
from .rzcc import DEFAULT_WINDOW
from .signalgen import (
    DEFAULT_FS,
    bandpass,
    gen_bandnoise,
    gen_sinusoid,
    list_wavs,
    load_wav,
    propagate,
    propagation_lead,
)
from .snn import DEFAULT_THRESHOLD, LifConfig, membrane_traces, quantize_weights

PIPELINES = ("hilbert-analytic", "hilbert-snn-float", "hilbert-snn-quant", "music")
SOURCES = ("narrowband", "bandnoise", "wav-dir")


def circular_error(estimate, truth, degrees: bool = True):
    """``|wrap(estimate - truth)|``, in degrees by default."""
    e = np.abs(wrap_angle(np.asarray(estimate) - np.asarray(truth)))
    return np.degrees(e) if degrees else e


def doa_smooth(estimates, window_bins: int = 25, valid=None) -> np.ndarray:
    """Centred circular running median (window truncated at the ends).

    Angles in each window are unwrapped around the window's circular mean
    before taking the median. Entries with ``valid`` False are ignored; a
    window with no valid entry yields NaN.
    """
    if window_bins < 1 or window_bins % 2 == 0:
        raise ValueError("window_bins must be a positive odd integer")
    a = np.asarray(estimates, dtype=float)
    ok = np.ones(a.shape, bool) if valid is None else np.asarray(valid, bool)
    half = window_bins // 2
    out = np.empty_like(a)
    for i in range(a.size):
        lo, hi = max(0, i - half), i + half + 1
        seg = a[lo:hi][ok[lo:hi]]
        if seg.size == 0:
            out[i] = np.nan
            continue
        mu = np.angle(np.mean(np.exp(1j * seg)))
        out[i] = mu + np.median(wrap_angle(seg - mu))
    return wrap_angle(out)


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepConfig:
    """Everything a trial needs besides the bank and geometry."""

    pipeline: str = "hilbert-snn-float"
    source: str = "narrowband"
    f0: float = 2000.0
    band: tuple = DEFAULT_BAND
    wav_dir: str | None = None
    duration: float = 1.0
    wav_segment: float = 2.0
    distance: float = DEFAULT_DISTANCE
    fs: float = DEFAULT_FS
    kernel_ms: float = 10.0
    rzcc_w: int = DEFAULT_WINDOW
    rzcc_mode: str = "bipolar"
    rzcc_rule: str = "monotone"
    lif_freq: float = 2000.0
    threshold: float = DEFAULT_THRESHOLD
    music_frame: int = 2048

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ValueError(f"unknown pipeline {self.pipeline!r}; choose from {PIPELINES}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}; choose from {SOURCES}")
        if self.source == "wav-dir" and not self.wav_dir:
            raise ValueError("source 'wav-dir' needs wav_dir")
        self.band = tuple(float(b) for b in self.band)

    @property
    def lif(self) -> LifConfig:
        return LifConfig.for_band(self.lif_freq, self.fs, self.threshold)

    @property
    def kernel(self) -> SthtKernel:
        return SthtKernel.from_duration(self.kernel_ms, self.fs)


def trial_seeds(seed: int, trial: int) -> tuple[int, int, int]:
    """Independent (angle, source, noise) seeds derived from (seed, trial)."""
    ss = np.random.SeedSequence([int(seed), int(trial)])
    return tuple(int(c.generate_state(1)[0]) for c in ss.spawn(3))


class _WavPool:
    def __init__(self, directory, fs):
        self.files = list_wavs(directory)
        self.fs = fs
        self._cache = {}

    def segment(self, rng, dur):
        n = int(round(dur * self.fs))
        order = rng.permutation(len(self.files))
        for k in order:
            sig = self._load(self.files[k])
            if sig is not None and sig.shape[0] >= n:
                start = int(rng.integers(0, sig.shape[0] - n + 1))
                return sig[start : start + n]
        raise ValueError(f"no WAV file is at least {dur} s long at {self.fs} Hz")

    def _load(self, path):
        if path not in self._cache:
            s = load_wav(path)
            if s.fs != self.fs or "silent" in s.flags:
                self._cache[path] = None
            else:
                self._cache[path] = s.samples[0]
        return self._cache[path]


def make_source(cfg: SweepConfig, rng, wavs: _WavPool | None = None) -> np.ndarray:
    if cfg.source == "narrowband":
        return gen_sinusoid(cfg.f0, cfg.duration, cfg.fs, phase=rng.uniform(0, 2 * np.pi))
    if cfg.source == "bandnoise":
        return gen_bandnoise(cfg.band[0], cfg.band[1], cfg.duration, cfg.fs,
                             seed=int(rng.integers(2**63)))
    return wavs.segment(rng, cfg.wav_segment)


class TrialRunner:
    """Maps one received (M, N) record to a grid index for a pipeline."""

    def __init__(self, cfg: SweepConfig, geom: ArrayGeometry, bank: BeamformerBank | None):
        self.cfg, self.geom, self.bank = cfg, geom, bank
        if cfg.pipeline == "music":
            self.music_cfg = MusicConfig(frame_len=cfg.music_frame, fs=cfg.fs,
                                         distance=cfg.distance)
            self.cache = SteeringCache(geom, self.music_cfg)
            self.grid = self.music_cfg.grid
        else:
            if bank is None:
                raise ValueError(f"pipeline {cfg.pipeline} needs a beamformer bank")
            bank.check_geometry(geom)
            want = "complex" if cfg.pipeline == "hilbert-analytic" else "real"
            if bank.kind != want:
                raise ValueError(f"pipeline {cfg.pipeline} needs a {want} bank")
            self.grid = bank.grid
            self.kernel = cfg.kernel
            self.lif = cfg.lif
            if cfg.pipeline == "hilbert-snn-quant":
                q, scale = quantize_weights(bank.vectors)
                deq = q / scale
                self.qbank = BeamformerBank(
                    bank.grid, deq / np.linalg.norm(deq, axis=1, keepdims=True), "real"
                )

    def __call__(self, x: np.ndarray) -> dict:
        c = self.cfg
        if c.pipeline == "music":
            return {"index": int(music_estimate(x, self.geom, self.music_cfg, cache=self.cache).index[0])}
        if c.pipeline == "hilbert-analytic":
            xb = bandpass(x, c.band[0], c.band[1], c.fs)
            tr = beam_power(stht(xb, self.kernel), self.bank)
            return {"index": int(tr.index[0])}
        ras = snn_front_end(x, c.fs, c.band, self.kernel, c.rzcc_w, c.rzcc_mode, c.rzcc_rule)
        start = self.lif.settle_samples
        if c.pipeline == "hilbert-snn-float":
            r = membrane_traces(ras, self.lif)
            return {"index": int(beam_power(r, self.bank, start=start).index[0])}
        # quantized: spiking integer readout, plus the paired weight-only check
        tr, sat = spiking_doa(ras, self.bank, self.lif, start=start, quantized=True)
        r = membrane_traces(ras, self.lif)
        i_float = int(beam_power(r, self.bank, start=start).index[0])
        i_qw = int(beam_power(r, self.qbank, start=start).index[0])
        return {
            "index": int(tr.index[0]),
            "valid": bool(tr.valid[0]),
            "saturated": bool(sat),
            "float_index": i_float,
            "quant_weight_index": i_qw,
            "peak_rate": float(tr.power[0].max() / ((ras.n_samples - start) / c.fs)),
        }


def run_trial(cfg: SweepConfig, geom, runner: TrialRunner, snr_db: float, seed: int,
              trial: int, wavs=None) -> dict:
    s_theta, s_src, s_noise = trial_seeds(seed, trial)
    theta = float(np.random.default_rng(s_theta).uniform(-np.pi, np.pi))
    src = make_source(cfg, np.random.default_rng(s_src), wavs)
    x = propagate(src, geom, theta, cfg.distance, snr_db, s_noise, cfg.fs).samples
    x = x[:, propagation_lead(geom, cfg.distance, cfg.fs) :]
    out = runner(x)
    est = float(runner.grid.angles[out["index"]])
    rec = {
        "snr_db": snr_db,
        "trial": trial,
        "theta_deg": float(np.degrees(theta)),
        "estimate_deg": float(np.degrees(est)),
        "error_deg": float(circular_error(est, theta)),
    }
    rec.update({k: v for k, v in out.items() if k != "index"})
    return rec


@dataclass
class SweepResult:
    config: SweepConfig
    trials: list = field(default_factory=list)

    def summary(self) -> list[dict]:
        rows = []
        for snr in sorted({t["snr_db"] for t in self.trials}, reverse=True):
            e = np.array([t["error_deg"] for t in self.trials if t["snr_db"] == snr])
            q1, med, q3 = np.percentile(e, [25, 50, 75])
            row = {"snr_db": snr, "n": int(e.size), "mae_deg": float(e.mean()),
                   "median_deg": float(med), "q1_deg": float(q1), "q3_deg": float(q3)}
            sub = [t for t in self.trials if t["snr_db"] == snr]
            if sub and "quant_weight_index" in sub[0]:
                row["weight_quant_agreement"] = float(np.mean(
                    [t["float_index"] == t["quant_weight_index"] for t in sub]))
            rows.append(row)
        return rows

    def mae(self, snr_db: float) -> float:
        return next(r["mae_deg"] for r in self.summary() if r["snr_db"] == snr_db)

    def write_trials_csv(self, path) -> None:
        _write_rows(path, sorted(self.trials, key=lambda t: (-t["snr_db"], t["trial"])))

    def write_summary_csv(self, path) -> None:
        _write_rows(path, self.summary())


def _write_rows(path, rows):
    if not rows:
        raise ValueError("nothing to write")
    keys = list(rows[0].keys())
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def run_mae_sweep(
    cfg: SweepConfig,
    geom: ArrayGeometry,
    bank: BeamformerBank | None,
    snr_list=(20.0,),
    n_trials: int = 100,
    seed: int = 0,
    n_jobs: int = 1,
) -> SweepResult:
    """Random-DoA trials per SNR; every trial is a pure function of (seed, trial).

    Angles, sources and noise draws are shared across SNR values so that
    SNR is the only thing that changes between paired trials.
    """
    runner = TrialRunner(cfg, geom, bank)
    wavs = _WavPool(cfg.wav_dir, cfg.fs) if cfg.source == "wav-dir" else None
    jobs = [(snr, t) for snr in snr_list for t in range(n_trials)]
    if n_jobs == 1:
        recs = [run_trial(cfg, geom, runner, snr, seed, t, wavs) for snr, t in jobs]
    else:
        from joblib import Parallel, delayed

        recs = Parallel(n_jobs=n_jobs)(
            delayed(run_trial)(cfg, geom, runner, snr, seed, t, wavs) for snr, t in jobs
        )
    recs.sort(key=lambda r: (-r["snr_db"], r["trial"]))
    return SweepResult(cfg, recs)


# ---------------------------------------------------------------- patterns


def pattern_reference_rows(bank: BeamformerBank, geom: ArrayGeometry) -> dict:
    """Grid rows for the best-case (on a mic) and worst-case (between mics) DoAs."""
    ref = float(geom.mic_angles[0]) if geom.mic_angles is not None else 0.0
    return {
        "best": bank.grid.nearest_index(ref),
        "worst": bank.grid.nearest_index(float(wrap_angle(ref + np.pi / geom.n_mics))),
    }


def export_beam_pattern(bank: BeamformerBank, path, geom: ArrayGeometry,
                        mode: str = "bank", probe=None, front_end=None,
                        distance: float = DEFAULT_DISTANCE) -> np.ndarray:
    """Write ``theta_deg, theta_prime_deg, b, row`` and return the pattern."""
    if mode == "bank":
        P = beam_pattern(bank)
    elif mode == "sweep":
        if probe is None:
            raise ValueError("signal-sweep patterns need a probe signal")
        P = beam_pattern_sweep(bank, probe, geom, distance, front_end=front_end)
    else:
        raise ValueError(f"unknown pattern mode {mode!r}")
    flags = {v: k for k, v in pattern_reference_rows(bank, geom).items()}
    deg = np.degrees(bank.grid.angles)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta_deg", "theta_prime_deg", "b", "row"])
        for g in range(P.shape[0]):
            tag = flags.get(g, "")
            for h in range(P.shape[1]):
                w.writerow([repr(float(deg[g])), repr(float(deg[h])), repr(float(P[g, h])), tag])
    return P


# ---------------------------------------------------------------- calculators


@dataclass(frozen=True)
class ResourceCount:
    weights: int
    states: int
    cells: int
    bytes: int


def resource_count(M: int, G: int, mode: str = "float") -> ResourceCount:
    """Weights (2MG) plus per-neuron state (2G) of the Hilbert SNN.

    ``mode="quant"`` prices weights at 8 bits and state at 16 bits; ``"float"``
    prices every cell as float32.
    """
    if M < 1 or G < 1:
        raise ValueError("M and G must be positive")
    w, s = 2 * M * G, 2 * G
    if mode == "float":
        nbytes = 4 * (w + s)
    elif mode == "quant":
        nbytes = w + 2 * s
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ResourceCount(w, s, w + s, nbytes)


def music_resource_count(C: int, M: int, G: int) -> int:
    """Beamforming matrix entries of the multi-bin FFT baseline, C M G."""
    return C * M * G


def rsnn_resource_count(C: int, N_r: int, G: int, per_neuron: int = 4) -> int:
    """Recurrent SNN comparator: input, recurrent and readout weights plus
    ``per_neuron`` cells (one state and three parameters) for each neuron."""
    return C * N_r + N_r**2 + N_r * G + per_neuron * (N_r + G)


def fft_power_scale(p_ref_mW, ch_ref, ch, n_ref, n, node_ref_nm, node_nm, v_ref, v) -> float:
    """Linear scaling in channels, FFT size and node, quadratic in supply voltage."""
    args = (p_ref_mW, ch_ref, ch, n_ref, n, node_ref_nm, node_nm, v_ref, v)
    if any(not a > 0 for a in args):
        raise ValueError("all power-scaling arguments must be positive")
    return float(p_ref_mW * (ch / ch_ref) * (n / n_ref) * (node_nm / node_ref_nm) * (v / v_ref) ** 2)


# ---------------------------------------------------------------- manifests


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def git_describe(cwd=None) -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=cwd, capture_output=True, text=True, timeout=5,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_manifest(path, config: dict, seed=None, runtime_s: float | None = None,
                   extra: dict | None = None) -> dict:
    man = {
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "git": git_describe(Path(path).resolve().parent),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "runtime_s": runtime_s,
    }
    if extra:
        man.update(extra)
    with open(path, "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return man


class Stopwatch:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        return False


def sweep_config_dict(cfg: SweepConfig) -> dict:
    d = asdict(cfg)
    d["band"] = list(cfg.band)
    return d
