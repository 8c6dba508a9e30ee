"""Leaky integrate-and-fire synapse/membrane dynamics, float and integer.

Both the synapse and the membrane are first-order leaky integrators,

    i[m] = alpha_s * i[m-1] + (weighted input)[m]
    v[m] = alpha_m * v[m-1] + i[m]

so a single input event produces ``(m+1) alpha^m`` when the two decays are
equal. Filters are not normalised: the DC gain of the cascade is
``1 / ((1 - alpha_s) (1 - alpha_m))``. Spiking neurons subtract the threshold
from ``v`` on the step they fire.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal as sps

from .signalgen import DEFAULT_FS

DEFAULT_THRESHOLD = 4.3
STATE_MAX = 2**15 - 1
DECAY_SHIFT = 15
CHUNK = 8192

_QBANK_MAGIC = b"HQBK\x01"


def tau_for_band(f: float) -> float:
    """Time constant whose first-order corner frequency is ``f``."""
    if not f > 0:
        raise ValueError("frequency must be positive")
    return 1.0 / (2 * np.pi * f)


def alpha_for(tau: float, fs: float = DEFAULT_FS) -> float:
    """Per-sample decay ``exp(-1 / (fs tau))``; ``tau = 0`` gives 0."""
    if tau < 0 or fs <= 0:
        raise ValueError("tau must be >= 0 and fs > 0")
    return 0.0 if tau == 0 else float(np.exp(-1.0 / (fs * tau)))


@dataclass(frozen=True)
class LifConfig:
    tau_syn: float
    tau_mem: float | None = None
    threshold: float = DEFAULT_THRESHOLD
    fs: float = DEFAULT_FS

    def __post_init__(self):
        if self.tau_mem is None:
            object.__setattr__(self, "tau_mem", self.tau_syn)
        if self.tau_syn <= 0 or self.tau_mem <= 0:
            raise ValueError("time constants must be positive")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.fs <= 0:
            raise ValueError("fs must be positive")

    @classmethod
    def for_band(cls, f: float, fs: float = DEFAULT_FS, threshold: float = DEFAULT_THRESHOLD):
        tau = tau_for_band(f)
        return cls(tau, tau, threshold, fs)

    @property
    def alpha_syn(self) -> float:
        return alpha_for(self.tau_syn, self.fs)

    @property
    def alpha_mem(self) -> float:
        return alpha_for(self.tau_mem, self.fs)

    @property
    def dc_gain(self) -> float:
        return 1.0 / ((1 - self.alpha_syn) * (1 - self.alpha_mem))

    @property
    def settle_samples(self) -> int:
        """Samples to discard so the filter start-up has decayed (3 tau)."""
        return int(np.ceil(3 * max(self.tau_syn, self.tau_mem) * self.fs))

    def with_threshold(self, threshold: float) -> "LifConfig":
        return replace(self, threshold=threshold)


@dataclass(frozen=True)
class QuantSpec:
    weight_bits: int = 8
    state_bits: int = 16

    @property
    def weight_max(self) -> int:
        return 2 ** (self.weight_bits - 1)

    @property
    def state_max(self) -> int:
        return 2 ** (self.state_bits - 1) - 1


def _as_dense(spikes) -> np.ndarray:
    d = spikes.data if hasattr(spikes, "data") else spikes
    return np.atleast_2d(np.asarray(d, dtype=float))


def _drive(spikes, weights) -> np.ndarray:
    """Weighted input current per neuron, (G, N) (or (C, N) if weights is None)."""
    s = _as_dense(spikes)
    if weights is None:
        return s
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    if w.shape[1] != s.shape[0]:
        raise ValueError(
            f"weights expect {w.shape[1]} input channels, spikes have {s.shape[0]}"
        )
    return w @ s


def _leak(x: np.ndarray, alpha: float, zi=None):
    """First-order leaky integrator along the last axis, ``y = alpha y[-1] + x``."""
    if zi is None:
        zi = np.zeros(x.shape[:-1] + (1,))
    return sps.lfilter([1.0], [1.0, -alpha], x, axis=-1, zi=zi)


def membrane_traces(spikes, cfg: LifConfig) -> np.ndarray:
    """Per-channel synapse+membrane response (identity weights), (C, N)."""
    return lif_linear(spikes, None, cfg)


def lif_linear(spikes, weights, cfg: LifConfig) -> np.ndarray:
    """Membrane potential with the reset term neglected.

    ``weights`` is (C,) for one neuron, (G, C) for a bank, or ``None`` for
    per-channel traces. Returns (N,) for a single weight vector, else (G, N).
    """
    single = weights is not None and np.ndim(weights) == 1
    cur, _ = _leak(_drive(spikes, weights), cfg.alpha_syn)
    v, _ = _leak(cur, cfg.alpha_mem)
    return v[0] if single else v


def lif_spiking(spikes, weights, cfg: LifConfig, record: bool = True):
    """Spiking LIF bank with reset by threshold subtraction.

    Returns ``(out, v)``: output spikes (G, N) as uint8 and the membrane
    trace (G, N) if ``record`` else ``None``. An infinite threshold reproduces
    :func:`lif_linear` exactly.
    """
    drive = np.atleast_2d(_drive(spikes, weights))
    g, n = drive.shape
    a_m, thr = cfg.alpha_mem, cfg.threshold
    out = np.zeros((g, n), dtype=np.uint8)
    trace = np.empty((g, n)) if record else None
    zi = np.zeros((g, 1))
    v = np.zeros(g)
    for start in range(0, n, CHUNK):
        stop = min(n, start + CHUNK)
        cur, zi = _leak(drive[:, start:stop], cfg.alpha_syn, zi)
        for k in range(stop - start):
            v = a_m * v + cur[:, k]
            fired = v >= thr
            if fired.any():
                out[fired, start + k] = 1
                v = np.where(fired, v - thr, v)
            if record:
                trace[:, start + k] = v
    return out, trace


def quantize_weights(W, spec: QuantSpec = QuantSpec()):
    """Map the largest |weight| to ``2**(bits-1)`` and round to integers.

    Returns ``(q, scale)`` with ``q = round(W * scale)``.
    """
    W = np.asarray(W, dtype=float)
    if not np.all(np.isfinite(W)):
        raise ValueError("weights must be finite")
    peak = np.max(np.abs(W))
    if peak == 0:
        raise ValueError("cannot quantize an all-zero weight matrix")
    scale = spec.weight_max / peak
    q = np.round(W * scale).astype(np.int64)
    return q, float(scale)


def quant_decay(alpha: float) -> int:
    return int(round(alpha * 2**DECAY_SHIFT))


def _sat(x: np.ndarray, limit: int):
    hit = bool(np.any(np.abs(x) > limit))
    return np.clip(x, -limit, limit), hit


def lif_spiking_quantized(
    spikes,
    qweights,
    cfg: LifConfig,
    threshold: int,
    spec: QuantSpec = QuantSpec(),
    record: bool = False,
):
    """Integer LIF bank: ``x <- (x * a) >> 15`` decays and saturating state.

    ``threshold`` is in integer membrane units. Returns ``(out, v, saturated)``
    where ``saturated`` reports whether any state hit the clip limit.
    """
    s = _as_dense(spikes).astype(np.int64)
    q = np.atleast_2d(np.asarray(qweights, dtype=np.int64))
    if q.shape[1] != s.shape[0]:
        raise ValueError("weight/spike channel mismatch")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    a_s, a_m = quant_decay(cfg.alpha_syn), quant_decay(cfg.alpha_mem)
    lim = spec.state_max
    g, n = q.shape[0], s.shape[1]
    out = np.zeros((g, n), dtype=np.uint8)
    trace = np.empty((g, n), dtype=np.int64) if record else None
    i = np.zeros(g, dtype=np.int64)
    v = np.zeros(g, dtype=np.int64)
    saturated = False
    active = np.flatnonzero(np.any(s != 0, axis=0))
    next_active = 0
    for m in range(n):
        i = (i * a_s) >> DECAY_SHIFT
        if next_active < active.size and active[next_active] == m:
            i = i + q @ s[:, m]
            next_active += 1
        i, hit_i = _sat(i, lim)
        v = ((v * a_m) >> DECAY_SHIFT) + i
        v, hit_v = _sat(v, lim)
        saturated |= hit_i or hit_v
        fired = v >= threshold
        if fired.any():
            out[fired, m] = 1
            v = np.where(fired, v - threshold, v)
        if record:
            trace[:, m] = v
    return out, trace, saturated


def save_quantized_bank(path, q, scale: float, meta: dict | None = None) -> None:
    """Little-endian layout: magic, u32 header length, JSON header, f64 scale,
    u32 rows, u32 cols, i16 matrix (row-major).

    Weights span [-128, 128], so 16-bit storage is used: +128 has no int8 code.
    """
    q = np.asarray(q)
    if q.ndim != 2:
        raise ValueError("quantized bank must be 2-D")
    header = json.dumps(meta or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_QBANK_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<dII", scale, *q.shape))
        fh.write(q.astype("<i2").tobytes())


def load_quantized_bank(path):
    """Returns ``(q, scale, meta)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_QBANK_MAGIC):
        raise ValueError(f"{path} is not a quantized bank file")
    off = len(_QBANK_MAGIC)
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    meta = json.loads(blob[off : off + hlen].decode())
    off += hlen
    scale, rows, cols = struct.unpack_from("<dII", blob, off)
    off += struct.calcsize("<dII")
    q = np.frombuffer(blob, dtype="<i2", count=rows * cols, offset=off)
    return q.reshape(rows, cols).astype(np.int64), scale, meta
