"""Command-line interface: ``hilbertdoa <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .beamform import (
    BeamformerBank,
    DegenerateCovarianceError,
    GeometryMismatchError,
    beam_power,
    design_bank_analytic,
    design_bank_snn,
    snn_front_end,
    spiking_doa,
)
from .config import ConfigError, build_geometry, build_grid, load_config
from .geometry import DoaGrid
from .harness import (
    Stopwatch,
    SweepConfig,
    doa_smooth,
    export_beam_pattern,
    resource_count,
    run_mae_sweep,
    sweep_config_dict,
    write_manifest,
)
from .hilbert import SignalTooShortError, SthtKernel, analytic_full, stht
from .music import MusicConfig, music_estimate
from .rzcc import rzcc_encode
from .signalgen import (
    CalibrationError,
    WavFormatError,
    gen_bandnoise,
    gen_chirp,
    bandpass,
    gen_sinusoid,
    load_wav,
    propagate,
    propagation_lead,
    save_wav,
)
from .snn import LifConfig, membrane_traces, quantize_weights, save_quantized_bank

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _config(args) -> dict:
    return load_config(args.config, args.set or ())


def _manifest_path(args, default_dir=".") -> Path:
    if getattr(args, "manifest", None):
        return Path(args.manifest)
    out = getattr(args, "out", None)
    if out:
        p = Path(out)
        return p / "manifest.json" if p.suffix == "" else p.with_name(p.name + ".manifest.json")
    return Path(default_dir) / "hilbertdoa_manifest.json"


def _manifest(args, cfg, command, seed=None, runtime_s=None, **extra):
    cli = {k: v for k, v in vars(args).items() if k not in ("func", "set", "config")}
    write_manifest(_manifest_path(args), cfg, seed=seed, runtime_s=runtime_s,
                   extra={"command": command, "config_file": args.config,
                          "overrides": list(args.set or ()), "cli": cli, **extra})


def _template(cfg: dict) -> np.ndarray:
    t, fs = cfg["template"], cfg["signal"]["fs"]
    if t["kind"] == "chirp":
        return gen_chirp(t["f_lo"], t["f_hi"], t["duration"], fs)
    if t["kind"] == "sinusoid":
        return gen_sinusoid(t["f0"], t["duration"], fs)
    return gen_bandnoise(t["f_lo"], t["f_hi"], t["duration"], fs, seed=t["seed"])


def _lif(cfg: dict) -> LifConfig:
    s = cfg["snn"]
    return LifConfig.for_band(s["lif_freq"], cfg["signal"]["fs"], s["threshold"])


def _read_input(args, cfg, geom) -> np.ndarray:
    fs = cfg["signal"]["fs"]
    if args.input:
        sig = load_wav(args.input)
        if sig.fs != fs:
            raise DataError(
                f"{args.input}: sample rate {sig.fs:g} Hz does not match the configured "
                f"{fs:g} Hz; resample the file first (no implicit resampling)"
            )
        return sig.samples
    kind = args.source
    if kind == "chirp":
        src = gen_chirp(cfg["template"]["f_lo"], cfg["template"]["f_hi"], args.duration, fs)
    elif kind == "sinusoid":
        src = gen_sinusoid(cfg["template"]["f0"], args.duration, fs)
    else:
        src = gen_bandnoise(cfg["template"]["f_lo"], cfg["template"]["f_hi"], args.duration, fs,
                            seed=args.seed)
    snr = np.inf if args.snr is None else args.snr
    x = propagate(src, geom, np.radians(args.theta), cfg["signal"]["distance"], snr,
                  args.seed, fs, cfg["signal"]["c"]).samples
    return x[:, propagation_lead(geom, cfg["signal"]["distance"], fs, cfg["signal"]["c"]) :]


def _add_common(p, config=True):
    if config:
        p.add_argument("--config", "-c", help="TOML config file (defaults are used if omitted)")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value; repeatable")
    p.add_argument("--manifest", help="where to write the run manifest JSON")


def _add_input(p):
    g = p.add_argument_group("input (a WAV file, or a synthetic source)")
    g.add_argument("--input", "-i", help="multichannel WAV (PCM16 or float32)")
    g.add_argument("--source", choices=["chirp", "sinusoid", "bandnoise"], default="chirp")
    g.add_argument("--theta", type=float, default=0.0, help="synthetic DoA in degrees")
    g.add_argument("--snr", type=float, default=None, help="synthetic SNR in dB (default: clean)")
    g.add_argument("--duration", type=float, default=2.0, help="synthetic duration in seconds")
    g.add_argument("--seed", type=int, default=0)


# ---------------------------------------------------------------- commands


def cmd_design(args) -> int:
    cfg = _config(args)
    geom, grid = build_geometry(cfg), build_grid(cfg)
    grid.check_against(geom)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sig = cfg["signal"]
    template = _template(cfg)
    desc = f"{cfg['template']['kind']} {cfg['template']}"
    written = []
    with Stopwatch() as sw:
        if cfg["analytic"]["enabled"]:
            a = cfg["analytic"]
            kernel = SthtKernel.from_duration(a["kernel_ms"], sig["fs"]) if a["transform"] == "stht" else None
            bank = design_bank_analytic(template, geom, grid, sig["distance"], sig["fs"],
                                        a["transform"], kernel, tuple(a["band"]), sig["c"],
                                        desc, args.jobs)
            bank.save(out / "bank_analytic.bin")
            written.append("bank_analytic.bin")
        if cfg["snn"]["enabled"]:
            s = cfg["snn"]
            bank = design_bank_snn(template, geom, grid, sig["distance"], sig["fs"],
                                   tuple(s["band"]), SthtKernel.from_duration(s["kernel_ms"], sig["fs"]),
                                   s["rzcc_w"], s["rzcc_mode"], s["rzcc_rule"], _lif(cfg),
                                   sig["c"], desc, args.jobs)
            bank.save(out / "bank_snn.bin")
            q, scale = quantize_weights(bank.vectors)
            save_quantized_bank(out / "bank_snn_quant.bin", q, scale, bank.meta)
            written += ["bank_snn.bin", "bank_snn_quant.bin"]
    rc = resource_count(geom.n_mics, grid.size)
    rq = resource_count(geom.n_mics, grid.size, "quant")
    print(f"wrote {', '.join(written)} to {out}")
    print(f"resource_count(M={geom.n_mics}, G={grid.size}) = {rc.cells} cells "
          f"({rc.bytes} B float32, {rq.bytes} B int8/int16)")
    _manifest(args, cfg, "design", runtime_s=sw.elapsed, outputs=written,
              geometry_hash=geom.hash(), resource_count=rc.cells)
    return EXIT_OK


def _estimate_trace(args, cfg, geom, x):
    window = int(round(cfg["estimate"]["window_s"] * cfg["signal"]["fs"]))
    fs = cfg["signal"]["fs"]
    if args.pipeline == "music":
        m = cfg["music"]
        mc = MusicConfig(m["frame_len"], tuple(m["band"]), m["n_bins"],
                         DoaGrid.uniform(m["n_grid"]), fs, cfg["signal"]["distance"],
                         cfg["signal"]["c"])
        per = max(1, window // m["frame_len"])
        return music_estimate(x, geom, mc, per)
    if not args.bank:
        raise ConfigError("--bank: required for Hilbert pipelines")
    bank = BeamformerBank.load(args.bank, geom)
    bank_fs = bank.meta.get("fs")
    if bank_fs is not None and bank_fs != fs:
        raise DataError(f"{args.bank}: bank was designed at {bank_fs:g} Hz, config has {fs:g} Hz")
    if bank.kind == "complex":
        a = cfg["analytic"]
        xb = bandpass(x, a["band"][0], a["band"][1], fs)
        if bank.meta.get("transform") == "full":
            return beam_power(analytic_full(xb, fs), bank, window)
        return beam_power(stht(xb, SthtKernel.from_duration(a["kernel_ms"], fs)), bank, window)
    s = cfg["snn"]
    lif = _lif(cfg)
    kernel = SthtKernel.from_duration(s["kernel_ms"], fs)
    ras = snn_front_end(x, fs, tuple(s["band"]), kernel, s["rzcc_w"], s["rzcc_mode"],
                        s["rzcc_rule"])
    if args.readout == "membrane":
        tr = beam_power(membrane_traces(ras, lif), bank, window, lif.settle_samples)
    else:
        tr, sat = spiking_doa(ras, bank, lif, window, lif.settle_samples,
                              quantized=args.readout == "quant")
        if sat:
            print("warning: 16-bit state saturated during the run", file=sys.stderr)
    # the raster starts after the STHT transient; report times on the input clock
    return replace(tr, t_start=tr.t_start + (kernel.W - 1) / fs)


def cmd_estimate(args) -> int:
    cfg = _config(args)
    geom = build_geometry(cfg)
    with Stopwatch() as sw:
        x = _read_input(args, cfg, geom)
        if x.shape[0] != geom.n_mics:
            raise DataError(f"input has {x.shape[0]} channels but the array has {geom.n_mics}")
        tr = _estimate_trace(args, cfg, geom, x)
        est = tr.estimate
        smooth = doa_smooth(est, min(cfg["estimate"]["smooth_bins"], _odd_at_most(len(est))),
                            tr.valid)
        idx, pw = tr.top(5)
    fh = open(args.out, "w") if args.out else sys.stdout
    try:
        if args.format == "csv":
            cols = ["t_start", "estimate_deg", "smoothed_deg", "valid"]
            cols += [f"top{k}_{n}" for k in range(1, 6) for n in ("deg", "power")]
            fh.write(",".join(cols) + "\n")
        for k in range(len(tr)):
            top = [(float(np.degrees(tr.grid.angles[i])), float(p)) for i, p in zip(idx[k], pw[k])]
            rec = {
                "t_start": float(tr.t_start[k]),
                "estimate_deg": float(np.degrees(est[k])),
                "smoothed_deg": None if np.isnan(smooth[k]) else float(np.degrees(smooth[k])),
                "valid": bool(tr.valid[k]),
                "top": [{"deg": d, "power": p} for d, p in top],
            }
            if args.format == "json":
                fh.write(json.dumps(rec) + "\n")
            else:
                flat = [rec["t_start"], rec["estimate_deg"], rec["smoothed_deg"], int(rec["valid"])]
                for d, p in top:
                    flat += [d, p]
                fh.write(",".join("" if v is None else repr(v) for v in flat) + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    _manifest(args, cfg, "estimate", seed=args.seed, runtime_s=sw.elapsed, n_windows=len(tr))
    return EXIT_OK


def _odd_at_most(n: int) -> int:
    return max(1, n if n % 2 else n - 1)


def cmd_eval(args) -> int:
    cfg = _config(args)
    e = cfg["eval"]
    pipeline = args.pipeline or e["pipeline"]
    snrs = args.snr if args.snr else e["snr"]
    n_trials = args.n_trials or e["n_trials"]
    seed = e["seed"] if args.seed is None else args.seed
    geom, grid = build_geometry(cfg), build_grid(cfg)
    sig, s = cfg["signal"], cfg["snn"]
    sc = SweepConfig(
        pipeline=pipeline, source=args.source or e["source"], f0=e["f0"], band=tuple(e["band"]),
        wav_dir=e["wav_dir"] or None, duration=e["duration"], wav_segment=e["wav_segment"],
        distance=sig["distance"], fs=sig["fs"],
        kernel_ms=cfg["analytic"]["kernel_ms"] if pipeline == "hilbert-analytic" else s["kernel_ms"],
        rzcc_w=s["rzcc_w"], rzcc_mode=s["rzcc_mode"], rzcc_rule=s["rzcc_rule"],
        lif_freq=s["lif_freq"], threshold=s["threshold"], music_frame=cfg["music"]["frame_len"],
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with Stopwatch() as sw:
        bank = None
        if pipeline != "music":
            if args.bank:
                bank = BeamformerBank.load(args.bank, geom)
            else:
                template = _template(cfg)
                if pipeline == "hilbert-analytic":
                    a = cfg["analytic"]
                    bank = design_bank_analytic(
                        template, geom, grid, sig["distance"], sig["fs"], a["transform"],
                        SthtKernel.from_duration(a["kernel_ms"], sig["fs"]), tuple(a["band"]),
                        sig["c"], n_jobs=args.jobs)
                else:
                    bank = design_bank_snn(
                        template, geom, grid, sig["distance"], sig["fs"], tuple(s["band"]),
                        SthtKernel.from_duration(s["kernel_ms"], sig["fs"]), s["rzcc_w"],
                        s["rzcc_mode"], s["rzcc_rule"], _lif(cfg), sig["c"], n_jobs=args.jobs)
        res = run_mae_sweep(sc, geom, bank, snrs, n_trials, seed, args.jobs)
    res.write_trials_csv(out / "trials.csv")
    res.write_summary_csv(out / "summary.csv")
    for row in res.summary():
        print(f"{pipeline} snr={row['snr_db']:g} dB n={row['n']}: MAE {row['mae_deg']:.3f} deg "
              f"(median {row['median_deg']:.3f}, IQR {row['q1_deg']:.3f}-{row['q3_deg']:.3f})")
    _manifest(args, cfg, "eval", seed=seed, runtime_s=sw.elapsed,
              sweep=sweep_config_dict(sc), snr_db=list(snrs), n_trials=n_trials)
    return EXIT_OK


def cmd_beampattern(args) -> int:
    cfg = _config(args)
    geom = build_geometry(cfg)
    with Stopwatch() as sw:
        bank = BeamformerBank.load(args.bank, geom)
        probe = None
        if args.mode == "sweep":
            fs = cfg["signal"]["fs"]
            probe = gen_chirp(cfg["template"]["f_lo"], cfg["template"]["f_hi"], args.duration, fs)
            if bank.kind == "real":
                raise ConfigError("--mode: signal sweeps are supported for complex banks only")
        P = export_beam_pattern(bank, args.out, geom, args.mode, probe,
                                distance=cfg["signal"]["distance"])
    print(f"wrote {P.shape[0]}x{P.shape[1]} beam pattern to {args.out}")
    _manifest(args, cfg, "beampattern", runtime_s=sw.elapsed)
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = _config(args)
    geom = build_geometry(cfg)
    s, fs = cfg["snn"], cfg["signal"]["fs"]
    w = args.w or s["rzcc_w"]
    mode = args.mode or s["rzcc_mode"]
    with Stopwatch() as sw:
        if args.input:
            sig = load_wav(args.input)
            if sig.fs != fs:
                raise DataError(f"{args.input}: sample rate {sig.fs:g} Hz, expected {fs:g} Hz")
            x = sig.samples
        else:
            x = _read_input(args, cfg, geom)
        if args.raw:
            a = stht(x, SthtKernel.from_duration(s["kernel_ms"], fs)).valid()
            ras = rzcc_encode(a, w, mode, s["rzcc_rule"])
        else:
            ras = snn_front_end(x, fs, tuple(s["band"]), SthtKernel.from_duration(s["kernel_ms"], fs),
                                w, mode, s["rzcc_rule"])
    dur = ras.n_samples / ras.fs
    for c in range(ras.n_channels):
        _, pol = ras.events(c)
        print(f"channel {c}: +1 {np.sum(pol > 0) / dur:.1f}/s, -1 {np.sum(pol < 0) / dur:.1f}/s")
    if args.out:
        if str(args.out).endswith(".csv"):
            ras.to_csv(args.out)
        else:
            ras.save(args.out)
    _manifest(args, cfg, "encode", seed=args.seed, runtime_s=sw.elapsed, effective_w=w,
              effective_mode=mode, rates=ras.rate().tolist())
    return EXIT_OK


def cmd_stht(args) -> int:
    cfg = _config(args)
    fs = cfg["signal"]["fs"]
    with Stopwatch() as sw:
        kernel = SthtKernel.from_duration(args.kernel_ms, fs)
        kernel.to_csv(args.out)
        if args.input:
            sig = load_wav(args.input)
            if sig.fs != fs:
                raise DataError(f"{args.input}: sample rate {sig.fs:g} Hz, expected {fs:g} Hz")
            a = stht(sig.samples, kernel)
            if args.analytic_out:
                t = np.arange(a.n_samples) / fs
                cols = [t]
                head = ["t"]
                for c in range(a.in_phase.shape[0]):
                    cols += [a.in_phase[c], a.quadrature[c]]
                    head += [f"i{c}", f"q{c}"]
                np.savetxt(args.analytic_out, np.column_stack(cols), delimiter=",",
                           header=",".join(head), comments="", fmt="%.17g")
    print(f"wrote {kernel.W}-tap kernel ({args.kernel_ms:g} ms at {fs:g} Hz) to {args.out}")
    _manifest(args, cfg, "stht", runtime_s=sw.elapsed, W=kernel.W)
    return EXIT_OK


def cmd_synth(args) -> int:
    """Write a propagated multichannel WAV (handy for trying ``estimate``)."""
    cfg = _config(args)
    geom = build_geometry(cfg)
    x = _read_input(argparse.Namespace(**{**vars(args), "input": None}), cfg, geom)
    peak = np.max(np.abs(x))
    save_wav(args.out, x / peak * 0.9 if peak > 0 else x, cfg["signal"]["fs"], args.wav_format)
    print(f"wrote {x.shape[0]}-channel {x.shape[1] / cfg['signal']['fs']:.2f} s WAV to {args.out}")
    _manifest(args, cfg, "synth", seed=args.seed)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hilbertdoa", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    jobs = os.cpu_count() or 1

    d = sub.add_parser("design", help="design beamformer banks from the config template")
    _add_common(d)
    d.add_argument("--out", "-o", default="banks", help="output directory")
    d.add_argument("--jobs", "-j", type=int, default=jobs)
    d.set_defaults(func=cmd_design)

    e = sub.add_parser("estimate", help="DoA trace for a WAV file or a synthetic source")
    _add_common(e)
    _add_input(e)
    e.add_argument("--bank", "-b", help="bank file from 'design'")
    e.add_argument("--pipeline", choices=["hilbert", "music"], default="hilbert")
    e.add_argument("--readout", choices=["membrane", "spiking", "quant"], default="membrane",
                   help="SNN banks only: membrane power, float spikes or int8/int16 spikes")
    e.add_argument("--format", choices=["csv", "json"], default="csv")
    e.add_argument("--out", "-o", help="output file (default: stdout)")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("eval", help="MAE sweep over random DoAs")
    _add_common(v)
    v.add_argument("--pipeline", choices=["hilbert-analytic", "hilbert-snn-float",
                                          "hilbert-snn-quant", "music"])
    v.add_argument("--source", choices=["narrowband", "bandnoise", "wav-dir"])
    v.add_argument("--snr", type=float, nargs="+")
    v.add_argument("--n-trials", type=int)
    v.add_argument("--seed", type=int)
    v.add_argument("--bank", "-b", help="reuse a bank instead of designing one")
    v.add_argument("--out", "-o", default="eval_out", help="output directory")
    v.add_argument("--jobs", "-j", type=int, default=jobs)
    v.set_defaults(func=cmd_eval)

    b = sub.add_parser("beampattern", help="export a G x G beam pattern CSV")
    _add_common(b)
    b.add_argument("--bank", "-b", required=True)
    b.add_argument("--mode", choices=["bank", "sweep"], default="bank")
    b.add_argument("--duration", type=float, default=0.4, help="sweep probe duration (s)")
    b.add_argument("--out", "-o", default="beam_pattern.csv")
    b.set_defaults(func=cmd_beampattern)

    n = sub.add_parser("encode", help="RZCC-encode a WAV file or synthetic source")
    _add_common(n)
    _add_input(n)
    n.add_argument("-w", type=int, help="RZCC window in samples")
    n.add_argument("--mode", choices=["bipolar", "unipolar-up", "unipolar-split"])
    n.add_argument("--raw", action="store_true", help="skip the band-pass pre-filter")
    n.add_argument("--out", "-o", help="raster output (.csv for text, otherwise binary)")
    n.set_defaults(func=cmd_encode)

    s = sub.add_parser("stht", help="export an STHT kernel, optionally transform a WAV")
    _add_common(s)
    s.add_argument("--kernel-ms", type=float, default=4.0)
    s.add_argument("--out", "-o", default="stht_kernel.csv")
    s.add_argument("--input", "-i", help="WAV to transform")
    s.add_argument("--analytic-out", help="CSV for the transformed WAV (t, i0, q0, ...)")
    s.set_defaults(func=cmd_stht)

    y = sub.add_parser("synth", help="write a propagated multichannel WAV")
    _add_common(y)
    _add_input(y)
    y.add_argument("--wav-format", choices=["pcm16", "float32"], default="float32")
    y.add_argument("--out", "-o", required=True)
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, WavFormatError, GeometryMismatchError, SignalTooShortError,
            CalibrationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DegenerateCovarianceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining ValueErrors come from argument/grid validation
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
