"""Microphone array geometries, far-field delays and steering vectors."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_SOUND = 340.0
DEFAULT_DISTANCE = 1.5

KINDS = ("circular", "linear", "random-frozen")


def wrap_angle(theta):
    """Wrap angles (radians) into [-pi, pi)."""
    return (np.asarray(theta, dtype=float) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """Planar microphone array.

    ``positions`` is an (M, 2) array in meters. For circular arrays the
    per-mic angles are kept as well so delays follow the closed form.
    """

    kind: str
    positions: np.ndarray
    radius: float
    mic_angles: np.ndarray | None = None
    seed: int | None = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        if pos.shape[0] < 2:
            raise ValueError("an array needs at least 2 microphones")
        if not np.all(np.isfinite(pos)):
            raise ValueError("microphone positions must be finite")
        if not np.isfinite(self.radius) or self.radius < 0:
            raise ValueError("radius must be finite and non-negative")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.mic_angles is not None:
            ang = wrap_angle(np.array(self.mic_angles, dtype=float))
            ang.setflags(write=False)
            object.__setattr__(self, "mic_angles", ang)

    @property
    def n_mics(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def circular(cls, n_mics: int = 7, radius: float = 0.045, offset: float = 0.0):
        """Uniform circular array, mic 0 at angle ``offset``."""
        if n_mics < 2:
            raise ValueError("an array needs at least 2 microphones")
        angles = wrap_angle(offset + 2 * np.pi * np.arange(n_mics) / n_mics)
        pos = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return cls("circular", pos, float(radius), angles)

    @classmethod
    def linear(cls, n_mics: int = 7, spacing: float = 0.015):
        """Uniform linear array along the x axis, centred at the origin."""
        x = (np.arange(n_mics) - (n_mics - 1) / 2) * spacing
        pos = np.stack([x, np.zeros(n_mics)], axis=1)
        return cls("linear", pos, float(np.max(np.abs(x))))

    @classmethod
    def random_frozen(cls, n_mics: int = 13, radius: float = 0.045, seed: int = 0):
        """Mics drawn uniformly inside a disc; reproducible from ``seed``."""
        rng = np.random.default_rng(seed)
        r = radius * np.sqrt(rng.uniform(0, 1, n_mics))
        phi = rng.uniform(-np.pi, np.pi, n_mics)
        pos = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
        return cls("random-frozen", pos, float(radius), seed=seed)

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "radius": self.radius,
            "positions": self.positions.tolist(),
        }
        if self.mic_angles is not None:
            d["mic_angles"] = self.mic_angles.tolist()
        if self.seed is not None:
            d["seed"] = self.seed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArrayGeometry":
        return cls(
            d["kind"],
            np.asarray(d["positions"], dtype=float),
            float(d["radius"]),
            None if d.get("mic_angles") is None else np.asarray(d["mic_angles"]),
            d.get("seed"),
        )

    def hash(self) -> str:
        """Stable short digest of the geometry, used to pair banks with configs."""
        payload = {
            "kind": self.kind,
            "radius": round(self.radius, 12),
            "positions": np.round(self.positions, 12).tolist(),
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class DoaGrid:
    """Strictly increasing DoA angles in [-pi, pi)."""

    angles: np.ndarray

    def __post_init__(self):
        a = np.array(self.angles, dtype=float).ravel()
        if a.size < 2:
            raise ValueError("a DoA grid needs at least 2 angles")
        if not np.all(np.isfinite(a)):
            raise ValueError("grid angles must be finite")
        if np.any(np.diff(a) <= 0):
            raise ValueError("grid angles must be strictly increasing")
        if a[0] < -np.pi or a[-1] >= np.pi:
            raise ValueError("grid angles must lie in [-pi, pi)")
        a.setflags(write=False)
        object.__setattr__(self, "angles", a)

    @classmethod
    def uniform(cls, n: int) -> "DoaGrid":
        """``2 pi k / n`` for ``k = -floor(n/2) .. ceil(n/2) - 1``; always contains 0."""
        if n < 2:
            raise ValueError("a DoA grid needs at least 2 angles")
        k = np.arange(-(n // 2), n - n // 2)
        return cls(2 * np.pi * k / n)

    @classmethod
    def oversampled(cls, n_mics: int, factor: int) -> "DoaGrid":
        """Uniform grid with ``factor * n_mics + 1`` points."""
        return cls.uniform(factor * n_mics + 1)

    @property
    def size(self) -> int:
        return self.angles.size

    @property
    def spacing(self) -> float:
        return 2 * np.pi / self.size

    def nearest_index(self, theta: float) -> int:
        d = np.abs(wrap_angle(self.angles - theta))
        return int(np.argmin(d))

    def check_against(self, geom: ArrayGeometry) -> None:
        if self.size <= geom.n_mics:
            raise ValueError(
                f"grid size {self.size} must exceed the number of microphones "
                f"({geom.n_mics})"
            )


def _check_finite(**kwargs):
    for name, v in kwargs.items():
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{name} must be finite")


def unit_vector(theta):
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def delays(
    geom: ArrayGeometry,
    theta: float,
    distance: float = DEFAULT_DISTANCE,
    c: float = SPEED_OF_SOUND,
) -> np.ndarray:
    """Far-field propagation delay (seconds) from a source at DoA ``theta`` to each mic.

    Circular arrays use ``D/c - R cos(theta - theta_i)/c``; other layouts use
    the plane-wave projection ``D/c - p_i . u(theta) / c``, which is the same
    quantity written in Cartesian form.
    """
    _check_finite(theta=theta, distance=distance, c=c)
    if c <= 0:
        raise ValueError("speed of sound must be positive")
    if distance <= geom.radius:
        raise ValueError("source distance must exceed the array radius")
    tau0 = distance / c
    if geom.kind == "circular":
        return tau0 - geom.radius * np.cos(theta - geom.mic_angles) / c
    return tau0 - geom.positions @ unit_vector(theta) / c


def steering_vector(
    geom: ArrayGeometry,
    freq: float,
    theta: float,
    distance: float = DEFAULT_DISTANCE,
    c: float = SPEED_OF_SOUND,
) -> np.ndarray:
    """Narrowband array response ``exp(-j 2 pi f tau_i(theta))``."""
    if freq < 0:
        raise ValueError("frequency must be non-negative")
    tau = delays(geom, theta, distance, c)
    # reduce f*tau mod 1 first so large tau0 does not cost phase precision
    cycles = np.mod(freq * tau, 1.0)
    return np.exp(-2j * np.pi * cycles)


def steering_matrix(
    geom: ArrayGeometry,
    freq: float,
    grid: DoaGrid,
    distance: float = DEFAULT_DISTANCE,
    c: float = SPEED_OF_SOUND,
) -> np.ndarray:
    """M x G matrix whose columns are steering vectors over ``grid``."""
    return np.stack(
        [steering_vector(geom, freq, th, distance, c) for th in grid.angles], axis=1
    )
