"""Covariance estimation, SVD beamformer design, beam power and DoA estimation.

Two signal paths share the same machinery:

* analytic: complex M-channel analytic signals, complex M-dim weights;
* SNN: real membrane traces of the 2M RZCC event channels ``[I; Q]``,
  real 2M-dim weights (4M for the split up/down layout).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    DEFAULT_DISTANCE,
    SPEED_OF_SOUND,
    ArrayGeometry,
    DoaGrid,
)
from .hilbert import SthtKernel, analytic_full, stht
from .rzcc import DEFAULT_WINDOW, rzcc_encode
from .signalgen import DEFAULT_FS, bandpass, propagate, propagation_lead
from .snn import LifConfig, membrane_traces

DEFAULT_BAND = (1500.0, 2500.0)
DEFAULT_WINDOW_S = 0.4

_BANK_MAGIC = b"HBNK\x01"


class DegenerateCovarianceError(ValueError):
    """The covariance has no usable energy, so no top singular vector exists."""


class GeometryMismatchError(ValueError):
    pass


# ---------------------------------------------------------------- covariance


def covariance_analytic(xa, start: int = 0) -> np.ndarray:
    """``(1/T) sum_t x_a(t) x_a(t)^H`` over samples ``>= start``.

    ``xa`` is an :class:`AnalyticSignal` (its ``valid_from`` is honoured) or a
    complex (M, N) array.
    """
    if hasattr(xa, "complex"):
        start = max(start, xa.valid_from)
        xa = xa.complex
    X = np.atleast_2d(np.asarray(xa))[:, start:]
    if X.shape[1] < 1:
        raise ValueError("no samples left after the transient")
    C = X @ X.conj().T / X.shape[1]
    return 0.5 * (C + C.conj().T)


def covariance_spectral(x, start: int = 0) -> np.ndarray:
    """Analytic covariance as a sum of rank-1 spectral terms.

    ``C = (1/T^2) sum_k X_a[k] X_a[k]^H`` where ``X_a`` is the spectrum of the
    analytic signal: DC and (even T) Nyquist bins kept once, positive bins
    doubled, negative bins zero. Equals the time-domain covariance of
    :func:`analytic_full` by Parseval.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))[:, start:]
    n = X.shape[1]
    mask = np.zeros(n)
    mask[0] = 1.0
    mask[1 : (n + 1) // 2] = 2.0
    if n % 2 == 0:
        mask[n // 2] = 1.0
    F = np.fft.fft(X, axis=1) * mask
    C = F @ F.conj().T / n**2
    return 0.5 * (C + C.conj().T)


def covariance_real(xr, start: int = 0, center: bool = False) -> np.ndarray:
    """Real (2M, 2M) sample covariance ``(1/T) sum_t r(t) r(t)^T``."""
    X = np.atleast_2d(np.asarray(xr, dtype=float))[:, start:]
    if X.shape[0] % 2:
        raise ValueError("real covariance expects an even number of channels")
    if X.shape[1] < 1:
        raise ValueError("no samples left after the transient")
    if center:
        X = X - X.mean(axis=1, keepdims=True)
    C = X @ X.T / X.shape[1]
    return 0.5 * (C + C.T)


def real_stack(xa) -> np.ndarray:
    """Complex (M, N) to real (2M, N) ``[Re; Im]``."""
    xa = np.atleast_2d(np.asarray(xa))
    return np.concatenate([xa.real, xa.imag])


def complex_to_real_vector(w) -> np.ndarray:
    """``u + jv`` to ``[u; v]``, so that ``Re(w^H x_a) = [u; v]^T [x_i; x_q]``."""
    w = np.asarray(w)
    return np.concatenate([w.real, w.imag], axis=-1)


def real_to_complex_vector(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    m = r.shape[-1] // 2
    return r[..., :m] + 1j * r[..., m:]


def quadrature_rotate(r) -> np.ndarray:
    """Map ``[u; v]`` to ``[-v; u]`` per (I, Q) block of the last axis.

    For vectors built from true I/Q data this is multiplication of the
    complex vector by ``j``; both span the same beamforming subspace.
    """
    r = np.asarray(r, dtype=float)
    d = r.shape[-1]
    if d % 2:
        raise ValueError("vector length must be even")
    blocks = 1 if d % 4 else 2  # split up/down layout has two I/Q blocks
    out = np.empty_like(r)
    step = d // blocks
    for b in range(blocks):
        seg = r[..., b * step : (b + 1) * step]
        h = step // 2
        out[..., b * step : b * step + h] = -seg[..., h:]
        out[..., b * step + h : (b + 1) * step] = seg[..., :h]
    return out


def top_vector(C) -> tuple[np.ndarray, float]:
    """Unit-norm eigenvector of the largest eigenvalue, phase-normalised.

    The largest-magnitude entry is made real and positive so that the result
    is reproducible across runs and platforms.
    """
    C = np.asarray(C)
    tr = float(np.real(np.trace(C)))
    if not np.all(np.isfinite(C)) or tr <= 0:
        raise DegenerateCovarianceError("covariance has no energy")
    vals, vecs = np.linalg.eigh(C)
    lam = float(vals[-1])
    if lam <= 1e-12 * tr:
        raise DegenerateCovarianceError("covariance has no dominant direction")
    u = vecs[:, -1]
    k = int(np.argmax(np.abs(u)))
    u = u * (np.abs(u[k]) / u[k])
    if np.iscomplexobj(u):
        u[k] = u[k].real
    return u / np.linalg.norm(u), lam


# ---------------------------------------------------------------- banks


@dataclass(frozen=True, eq=False)
class BeamformerBank:
    """G unit-norm beamforming vectors over a DoA grid.

    ``kind`` is ``"complex"`` (analytic path) or ``"real"`` (SNN path).
    """

    grid: DoaGrid
    vectors: np.ndarray
    kind: str = "complex"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        V = np.array(self.vectors)
        if V.ndim != 2 or V.shape[0] != self.grid.size:
            raise ValueError("bank needs one vector per grid angle")
        if self.kind not in ("complex", "real"):
            raise ValueError(f"unknown bank kind {self.kind!r}")
        V = V.astype(complex if self.kind == "complex" else float)
        norms = np.linalg.norm(V, axis=1)
        if np.any(np.abs(norms - 1) > 1e-9):
            raise ValueError("bank vectors must be unit norm")
        V.setflags(write=False)
        object.__setattr__(self, "vectors", V)

    @property
    def size(self) -> int:
        return self.grid.size

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def check_geometry(self, geom: ArrayGeometry) -> None:
        h = self.meta.get("geometry_hash")
        if h is not None and h != geom.hash():
            raise GeometryMismatchError(
                f"bank was designed for geometry {h}, config has {geom.hash()}"
            )

    def to_bytes(self) -> bytes:
        head = {
            "kind": self.kind,
            "shape": list(self.vectors.shape),
            "grid": self.grid.angles.tolist(),
            "meta": self.meta,
        }
        hb = json.dumps(head, sort_keys=True).encode()
        dtype = "<c16" if self.kind == "complex" else "<f8"
        return _BANK_MAGIC + struct.pack("<I", len(hb)) + hb + self.vectors.astype(dtype).tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "BeamformerBank":
        if not blob.startswith(_BANK_MAGIC):
            raise ValueError("not a beamformer bank file")
        off = len(_BANK_MAGIC)
        (hl,) = struct.unpack_from("<I", blob, off)
        off += 4
        head = json.loads(blob[off : off + hl].decode())
        off += hl
        dtype = "<c16" if head["kind"] == "complex" else "<f8"
        shape = tuple(head["shape"])
        V = np.frombuffer(blob, dtype=dtype, count=shape[0] * shape[1], offset=off)
        return cls(DoaGrid(np.array(head["grid"])), V.reshape(shape), head["kind"], head["meta"])

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, geom: ArrayGeometry | None = None) -> "BeamformerBank":
        with open(path, "rb") as fh:
            bank = cls.from_bytes(fh.read())
        if geom is not None:
            bank.check_geometry(geom)
        return bank


def _bank_meta(geom, template_desc, band, **extra) -> dict:
    meta = {
        "geometry_hash": geom.hash(),
        "n_mics": geom.n_mics,
        "template": template_desc,
        "band": list(band) if band is not None else None,
    }
    meta.update(extra)
    return meta


def _parallel_map(fn, items, n_jobs: int):
    if n_jobs == 1:
        return [fn(x) for x in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(fn)(x) for x in items)


def design_bank_analytic(
    template,
    geom: ArrayGeometry,
    grid: DoaGrid,
    distance: float = DEFAULT_DISTANCE,
    fs: float = DEFAULT_FS,
    transform: str = "full",
    kernel: SthtKernel | None = None,
    band=None,
    c: float = SPEED_OF_SOUND,
    template_desc: str = "",
    n_jobs: int = 1,
) -> BeamformerBank:
    """Complex bank: top eigenvector of the analytic covariance per grid angle.

    The template is propagated without noise, the propagation lead is cropped,
    and the analytic signal is the whole-record transform (``"full"``) or the
    causal STHT (``"stht"``) with its transient dropped.
    """
    grid.check_against(geom)
    template = np.asarray(template, dtype=float)
    lead = propagation_lead(geom, distance, fs, c)
    if transform == "stht":
        kernel = kernel or SthtKernel.from_duration(10, fs)
    elif transform != "full":
        raise ValueError(f"unknown transform {transform!r}")
    if template.size <= lead + (kernel.W if kernel else 1):
        raise ValueError("template is too short for the propagation lead and STHT window")

    def one(theta):
        x = propagate(template, geom, theta, distance, fs=fs, c=c).samples[:, lead:]
        if band is not None:
            x = bandpass(x, band[0], band[1], fs)
        a = analytic_full(x, fs) if transform == "full" else stht(x, kernel)
        return top_vector(covariance_analytic(a))[0]

    V = np.stack(_parallel_map(one, grid.angles, n_jobs))
    meta = _bank_meta(geom, template_desc, band, transform=transform,
                      stht_W=kernel.W if kernel else None, distance=distance, fs=fs)
    return BeamformerBank(grid, V, "complex", meta)


def snn_front_end(
    x,
    fs: float = DEFAULT_FS,
    band=DEFAULT_BAND,
    kernel: SthtKernel | None = None,
    w: int = DEFAULT_WINDOW,
    mode: str = "bipolar",
    rule: str = "monotone",
):
    """Band-pass, STHT and RZCC-encode an (M, N) signal; returns a SpikeRaster
    covering only samples past the STHT transient."""
    kernel = kernel or SthtKernel.from_duration(10, fs)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if band is not None:
        x = bandpass(x, band[0], band[1], fs)
    a = stht(x, kernel).valid()
    return rzcc_encode(a, w, mode, rule)


def design_bank_snn(
    template,
    geom: ArrayGeometry,
    grid: DoaGrid,
    distance: float = DEFAULT_DISTANCE,
    fs: float = DEFAULT_FS,
    band=DEFAULT_BAND,
    kernel: SthtKernel | None = None,
    w: int = DEFAULT_WINDOW,
    mode: str = "bipolar",
    rule: str = "monotone",
    lif: LifConfig | None = None,
    c: float = SPEED_OF_SOUND,
    template_desc: str = "",
    n_jobs: int = 1,
) -> BeamformerBank:
    """Real bank from the covariance of LIF membrane traces of RZCC events.

    Unipolar layouts carry a DC component in the membranes, so their
    covariance is taken after removing the per-channel mean.
    """
    grid.check_against(geom)
    template = np.asarray(template, dtype=float)
    kernel = kernel or SthtKernel.from_duration(10, fs)
    lif = lif or LifConfig.for_band(float(np.mean(band)), fs)
    lead = propagation_lead(geom, distance, fs, c)
    center = mode != "bipolar"

    def one(theta):
        x = propagate(template, geom, theta, distance, fs=fs, c=c).samples[:, lead:]
        r = membrane_traces(snn_front_end(x, fs, band, kernel, w, mode, rule), lif)
        C = covariance_real(r, start=lif.settle_samples, center=center)
        try:
            return top_vector(C)[0]
        except DegenerateCovarianceError as exc:
            raise DegenerateCovarianceError(
                f"no spike activity for grid angle {theta:.4f} rad"
            ) from exc

    V = np.stack(_parallel_map(one, grid.angles, n_jobs))
    meta = _bank_meta(
        geom, template_desc, band, transform="stht", stht_W=kernel.W, rzcc_w=w,
        rzcc_mode=mode, rzcc_rule=rule, tau_syn=lif.tau_syn, tau_mem=lif.tau_mem,
        distance=distance, fs=fs,
    )
    return BeamformerBank(grid, V, "real", meta)


# ---------------------------------------------------------------- estimation


@dataclass(frozen=True, eq=False)
class DoaTrace:
    """Per-window beam power (K, G) and the argmax DoA estimates."""

    power: np.ndarray
    grid: DoaGrid
    t_start: np.ndarray
    valid: np.ndarray | None = None
    smoothed: np.ndarray | None = None

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.power, dtype=float))
        if P.shape[1] != self.grid.size:
            raise ValueError("power vectors must match the grid")
        if not np.all(np.isfinite(P)):
            raise ValueError("power must be finite")
        object.__setattr__(self, "power", P)
        if self.valid is None:
            object.__setattr__(self, "valid", np.any(P > 0, axis=1))

    @property
    def index(self) -> np.ndarray:
        """Argmax per window; ties resolve to the smallest grid index."""
        return np.argmax(self.power, axis=1)

    @property
    def estimate(self) -> np.ndarray:
        return self.grid.angles[self.index]

    def __len__(self) -> int:
        return self.power.shape[0]

    def top(self, k: int = 5):
        """Indices and powers of the k strongest angles per window."""
        idx = np.argsort(-self.power, axis=1, kind="stable")[:, :k]
        return idx, np.take_along_axis(self.power, idx, axis=1)


def _windows(n: int, window: int | None, start: int = 0):
    if window is None or window >= n - start:
        return [(start, n)]
    if window < 1:
        raise ValueError("window must be at least one sample")
    return [(s, s + window) for s in range(start, n - window + 1, window)]


def _check_dims(X, bank):
    if X.shape[0] != bank.dim:
        raise ValueError(
            f"input has {X.shape[0]} channels but the bank expects {bank.dim}"
        )


def beam_power(
    x,
    bank: BeamformerBank,
    window: int | None = None,
    start: int = 0,
    fs: float = DEFAULT_FS,
) -> DoaTrace:
    """Mean beam output power ``w^H C w`` per non-overlapping window.

    ``x`` is a complex analytic (M, N) array / :class:`AnalyticSignal` for a
    complex bank, or real (2M, N) membrane traces for a real bank.
    """
    if hasattr(x, "complex"):
        start = max(start, x.valid_from)
        fs = x.fs
        x = x.complex if bank.kind == "complex" else real_stack(x.complex)
    X = np.atleast_2d(np.asarray(x))
    _check_dims(X, bank)
    V = bank.vectors
    rows, t0 = [], []
    for a, b in _windows(X.shape[1], window, start):
        Xw = X[:, a:b]
        if bank.kind == "complex":
            C = Xw @ Xw.conj().T / (b - a)
            p = np.real(np.einsum("gi,ij,gj->g", V.conj(), C, V))
        else:
            C = Xw.real @ Xw.real.T / (b - a)
            p = np.einsum("gi,ij,gj->g", V, C, V)
        rows.append(np.maximum(p, 0.0))
        t0.append(a / fs)
    return DoaTrace(np.array(rows), bank.grid, np.array(t0))


def spike_counts(out_spikes, window: int | None, start: int = 0) -> tuple[np.ndarray, list]:
    wins = _windows(out_spikes.shape[1], window, start)
    counts = np.array([out_spikes[:, a:b].sum(axis=1) for a, b in wins], dtype=float)
    return counts, wins


def spiking_doa(
    raster,
    bank: BeamformerBank,
    lif: LifConfig,
    window: int | None = None,
    start: int = 0,
    quantized: bool = True,
    threshold: float | None = None,
):
    """Spiking LIF readout: DoA = neuron with the most output spikes per window.

    With ``quantized=True`` the bank is mapped to 8-bit weights and the neurons
    run in 16-bit integer arithmetic; ``threshold`` (float membrane units,
    default ``lif.threshold``) is scaled by the same factor. Returns
    ``(trace, saturated)``; windows with no output spikes are marked invalid.
    """
    from .snn import lif_spiking, lif_spiking_quantized, quantize_weights

    if bank.kind != "real":
        raise ValueError("spiking readout needs a real (SNN) bank")
    s = raster.data if hasattr(raster, "data") else np.asarray(raster)
    _check_dims(s, bank)
    thr = lif.threshold if threshold is None else threshold
    saturated = False
    if quantized:
        q, scale = quantize_weights(bank.vectors)
        thr_q = max(1, int(round(thr * scale)))
        out, _, saturated = lif_spiking_quantized(s, q, lif, thr_q)
    else:
        out, _ = lif_spiking(s, bank.vectors, lif.with_threshold(thr), record=False)
    counts, wins = spike_counts(out, window, start)
    fs = getattr(raster, "fs", lif.fs)
    trace = DoaTrace(
        counts, bank.grid, np.array([a / fs for a, _ in wins]),
        valid=counts.sum(axis=1) > 0,
    )
    return trace, saturated


# ---------------------------------------------------------------- patterns


def _max_singular_2x2(a, b, c, d):
    s = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = np.sqrt(np.maximum(s * s - 4 * det * det, 0.0))
    return np.sqrt(np.maximum((s + disc) / 2, 0.0))


def beam_pattern(bank: BeamformerBank) -> np.ndarray:
    """G x G pattern ``b[g, h]`` between beams g and h from the bank alone.

    Complex banks use ``|<w_g, w_h>|``. Real banks use the largest principal
    cosine between the planes ``span{w, Jw}``, J being the I/Q rotation; for
    vectors built from true I/Q data this equals the complex value.
    """
    V = bank.vectors
    if bank.kind == "complex":
        P = np.abs(V.conj() @ V.T)
    else:
        J = quadrature_rotate(V)
        a = V @ V.T
        b = V @ J.T
        c = J @ V.T
        d = J @ J.T
        # {w, Jw} is orthonormal: J permutes entries with signs and is antisymmetric
        P = _max_singular_2x2(a, b, c, d)
    return np.clip(P, 0.0, 1.0)


def beam_pattern_sweep(
    bank: BeamformerBank,
    probe,
    geom: ArrayGeometry,
    distance: float = DEFAULT_DISTANCE,
    fs: float = DEFAULT_FS,
    front_end=None,
    c: float = SPEED_OF_SOUND,
    n_jobs: int = 1,
) -> np.ndarray:
    """Pattern from simulated responses: propagate ``probe`` from every grid
    angle and record each beam's power. Row g is normalised by its response
    at its own steering angle, so the diagonal is 1.

    ``front_end`` maps an (M, N) received signal to the bank's input
    representation; it defaults to the whole-record analytic signal.
    """
    lead = propagation_lead(geom, distance, fs, c)
    front_end = front_end or (lambda x: analytic_full(x, fs))

    def one(theta):
        x = propagate(probe, geom, theta, distance, fs=fs, c=c).samples[:, lead:]
        return beam_power(front_end(x), bank).power[0]

    R = np.stack(_parallel_map(one, bank.grid.angles, n_jobs), axis=1)  # (g, probe)
    diag = np.diag(R).copy()
    diag[diag <= 0] = np.inf
    return R / diag[:, None]
