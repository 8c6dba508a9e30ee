"""Experiment configuration: TOML file plus overrides, validated with key paths.

Every section and key is optional; missing values take the defaults below.
Unknown keys are rejected so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import copy
from pathlib import Path

import numpy as np

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .geometry import KINDS, ArrayGeometry, DoaGrid

DEFAULTS: dict = {
    "geometry": {
        "kind": "circular",
        "n_mics": 7,
        "radius": 0.045,
        "spacing": 0.015,
        "seed": 0,
        "offset_deg": 0.0,
        "positions": None,
    },
    "grid": {"n": 449},
    "signal": {"fs": 48000.0, "distance": 1.5, "c": 340.0},
    "template": {
        "kind": "chirp",
        "f_lo": 1500.0,
        "f_hi": 2500.0,
        "f0": 2000.0,
        "duration": 0.4,
        "seed": 0,
    },
    "analytic": {"enabled": True, "transform": "stht", "kernel_ms": 10.0, "band": [1500.0, 2500.0]},
    "snn": {
        "enabled": True,
        "band": [1500.0, 2500.0],
        "kernel_ms": 10.0,
        "rzcc_w": 12,
        "rzcc_mode": "bipolar",
        "rzcc_rule": "monotone",
        "lif_freq": 2000.0,
        "threshold": 4.3,
    },
    "music": {"frame_len": 2048, "band": [1600.0, 2400.0], "n_grid": 225, "n_bins": 1},
    "estimate": {"window_s": 0.4, "smooth_bins": 25},
    "eval": {
        "pipeline": "hilbert-snn-float",
        "source": "narrowband",
        "f0": 2000.0,
        "band": [1500.0, 2500.0],
        "snr": [20.0],
        "n_trials": 100,
        "seed": 0,
        "duration": 1.0,
        "wav_dir": "",
        "wav_segment": 2.0,
    },
}

_CHOICES = {
    ("geometry", "kind"): KINDS,
    ("template", "kind"): ("chirp", "sinusoid", "bandnoise"),
    ("analytic", "transform"): ("stht", "full"),
    ("snn", "rzcc_mode"): ("bipolar", "unipolar-up", "unipolar-split"),
    ("snn", "rzcc_rule"): ("monotone", "extremum"),
    ("eval", "pipeline"): ("hilbert-analytic", "hilbert-snn-float", "hilbert-snn-quant", "music"),
    ("eval", "source"): ("narrowband", "bandnoise", "wav-dir"),
}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


def _type_ok(default, value) -> bool:
    if default is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, list):
        return isinstance(value, list)
    return isinstance(value, type(default))


def merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        kp = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"{kp}: unknown key")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{kp}: expected a table")
            out[key] = merge(base[key], val, kp)
        else:
            if not _type_ok(base[key], val):
                raise ConfigError(f"{kp}: expected {type(base[key]).__name__}, got {val!r}")
            out[key] = float(val) if isinstance(base[key], float) else val
    return out


def parse_override(item: str) -> dict:
    """``section.key=value`` with a TOML-syntax value."""
    if "=" not in item:
        raise ConfigError(f"{item}: override must look like section.key=value")
    key, raw = item.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw  # bare strings
    parts = key.strip().split(".")
    d: dict = value
    for p in reversed(parts):
        d = {p: d}
    return d


def load_config(path=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"{path}: file not found") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = merge(cfg, raw)
    for ov in overrides:
        cfg = merge(cfg, ov if isinstance(ov, dict) else parse_override(ov))
    validate(cfg)
    return cfg


def _band(cfg, section, fs):
    b = cfg[section]["band"]
    if len(b) != 2 or not 0 < b[0] < b[1] < fs / 2:
        raise ConfigError(f"{section}.band: need [f_lo, f_hi] with 0 < f_lo < f_hi < fs/2")


def validate(cfg: dict) -> None:
    for (sec, key), choices in _CHOICES.items():
        if cfg[sec][key] not in choices:
            raise ConfigError(f"{sec}.{key}: {cfg[sec][key]!r} is not one of {list(choices)}")
    sig = cfg["signal"]
    for key in ("fs", "distance", "c"):
        if not sig[key] > 0:
            raise ConfigError(f"signal.{key}: must be positive")
    fs = sig["fs"]
    g = cfg["geometry"]
    if g["n_mics"] < 2:
        raise ConfigError("geometry.n_mics: need at least 2 microphones")
    if not g["radius"] > 0:
        raise ConfigError("geometry.radius: must be positive")
    if cfg["grid"]["n"] <= g["n_mics"]:
        raise ConfigError(
            f"grid.n: grid size {cfg['grid']['n']} must exceed geometry.n_mics ({g['n_mics']})"
        )
    if cfg["music"]["n_grid"] <= g["n_mics"]:
        raise ConfigError("music.n_grid: must exceed geometry.n_mics")
    t = cfg["template"]
    if not 0 < t["f_lo"] < t["f_hi"] < fs / 2:
        raise ConfigError("template.f_lo: need 0 < f_lo < f_hi < fs/2")
    if not 0 < t["f0"] < fs / 2:
        raise ConfigError("template.f0: need 0 < f0 < fs/2")
    if not t["duration"] > 0:
        raise ConfigError("template.duration: must be positive")
    for sec in ("analytic", "snn", "music", "eval"):
        _band(cfg, sec, fs)
    s = cfg["snn"]
    if s["rzcc_w"] < 2 or s["rzcc_w"] % 2:
        raise ConfigError("snn.rzcc_w: must be an even integer >= 2")
    if not s["threshold"] > 0:
        raise ConfigError("snn.threshold: must be positive")
    for sec in ("analytic", "snn"):
        if not cfg[sec]["kernel_ms"] > 0:
            raise ConfigError(f"{sec}.kernel_ms: must be positive")
    if cfg["estimate"]["smooth_bins"] < 1 or cfg["estimate"]["smooth_bins"] % 2 == 0:
        raise ConfigError("estimate.smooth_bins: must be a positive odd integer")
    e = cfg["eval"]
    if e["n_trials"] < 1:
        raise ConfigError("eval.n_trials: must be >= 1")
    if e["source"] == "wav-dir" and not e["wav_dir"]:
        raise ConfigError("eval.wav_dir: required when eval.source = 'wav-dir'")
    try:
        build_geometry(cfg)
    except ValueError as exc:
        raise ConfigError(f"geometry: {exc}") from exc


def build_geometry(cfg: dict) -> ArrayGeometry:
    g = cfg["geometry"]
    if g["positions"] is not None:
        pos = np.asarray(g["positions"], dtype=float)
        return ArrayGeometry(g["kind"], pos, float(np.max(np.hypot(pos[:, 0], pos[:, 1]))))
    if g["kind"] == "circular":
        return ArrayGeometry.circular(g["n_mics"], g["radius"], np.radians(g["offset_deg"]))
    if g["kind"] == "linear":
        return ArrayGeometry.linear(g["n_mics"], g["spacing"])
    return ArrayGeometry.random_frozen(g["n_mics"], g["radius"], g["seed"])


def build_grid(cfg: dict) -> DoaGrid:
    return DoaGrid.uniform(cfg["grid"]["n"])


def dump_toml(cfg: dict) -> str:
    """Render a config dict as TOML (flat tables, scalar/list values only)."""
    lines = []
    for sec, table in cfg.items():
        lines.append(f"[{sec}]")
        for k, v in table.items():
            if v is None:
                continue
            lines.append(f"{k} = {_toml_value(v)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def write_default_config(path) -> None:
    Path(path).write_text(dump_toml(DEFAULTS))
