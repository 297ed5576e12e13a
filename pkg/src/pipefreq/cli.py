"""Command line front end.

Every subcommand writes into a run directory (``--out``, default
``runs/<timestamp>-<command>``) together with ``config.json``, a snapshot
of the arguments and resolved configs. The exit code is 1 when a check
fails and 2 on bad input.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

from . import distributor, harness, transfer_sim
from .fitting import flag_names
from .framing import split_frames, write_frames_csv
from .signal_gen import StimulusConfig, generate_stimulus, load_config_file, quantize, write_csv, write_raw_int16
from .spectral import FftConfig

log = logging.getLogger("pipefreq")

STIM_FLAGS = {
    "carrier_freq": float,
    "repetition_rate": float,
    "sample_rate": float,
    "envelope_kind": str,
    "envelope_param": float,
    "visibility": float,
    "amplitude_fullscale_fraction": float,
    "n_pulses": int,
    "carrier_phase": float,
    "seed": int,
}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return {"true": True, "false": False, "none": None}.get(text.lower(), text)


def _parse_set(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _parse_value(v.strip())
    return out


def _stimulus(args) -> StimulusConfig:
    d = load_config_file(args.config) if args.config else {}
    for name in STIM_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            d[name] = v
    if getattr(args, "snr", None) is not None:
        d["snr_db"] = None if args.snr.lower() == "none" else float(args.snr)
    if getattr(args, "baseband", False):
        d["include_baseband"] = True
    d.update(_parse_set(args.set))
    return StimulusConfig.from_dict(d)


def _fft(args) -> FftConfig:
    kw = {}
    if getattr(args, "rounding", None):
        kw["rounding"] = args.rounding
    if getattr(args, "input_shift", None) is not None:
        kw["input_shift"] = args.input_shift
    return FftConfig(**kw)


def _run_dir(args) -> Path:
    out = Path(args.out) if args.out else Path("runs") / f"{time.strftime('%Y%m%d-%H%M%S')}-{args.command}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(out: Path, args, **configs):
    snap = {k: v for k, v in vars(args).items() if k != "func"}
    snap.update(configs)
    (out / "config.json").write_text(json.dumps(snap, indent=2, default=str))


def _report_checks(checks: dict) -> int:
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(checks.values()) else 1


def _add_stim_args(p):
    p.add_argument("--config", help="stimulus config (JSON or key = value text)")
    for name, typ in STIM_FLAGS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    p.add_argument("--snr", help="SNR in dB, or 'none' for noiseless")
    p.add_argument("--baseband", action="store_true", help="keep the envelope baseband term")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any stimulus field")


def _add_fft_args(p):
    p.add_argument("--rounding", choices=("round", "truncate"))
    p.add_argument("--input-shift", type=int)


def _add_sweep_args(p):
    p.add_argument("--f-start", type=float, default=100e6)
    p.add_argument("--f-stop", type=float, default=4e9)
    p.add_argument("--f-step", type=float, default=10e6)
    p.add_argument("--frames", type=int, default=50, help="frames per sweep point")
    p.add_argument("--workers", type=int, default=1)


# subcommands

def cmd_generate(args) -> int:
    stim = _stimulus(args)
    out = _run_dir(args)
    _snapshot(out, args, stimulus=stim.to_dict())
    x = generate_stimulus(stim)
    codes = quantize(x)
    write_csv(out / "stimulus.csv", x)
    write_raw_int16(out / "codes.bin", codes)
    print(f"{codes.size} samples written to {out}")
    return 0


def cmd_measure(args) -> int:
    stim = _stimulus(args)
    fft_cfg = _fft(args)
    out = _run_dir(args)
    _snapshot(out, args, stimulus=stim.to_dict())
    res = harness.run_pipeline(stim, fft_cfg, literal=args.literal)
    with open(out / "estimates.csv", "w") as fh:
        fh.write("frame_index,x_c_raw,freq_hz,flags\n")
        for e in res:
            fh.write(f"{e.frame_index},{e.x_c_raw},{e.freq_hz!r},{flag_names(e.flags)}\n")
    if args.dump_frames:
        write_frames_csv(out / "frames.csv", split_frames(quantize(generate_stimulus(stim)), res.period))
    point = harness.summarize_point(stim.carrier_freq, res.freqs, res.clipped_samples)
    summary = {"frames": res.n_frames, "dropped": res.dropped, "estimates": len(res),
               "period": res.period, **vars(point)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    checks = {"no_clipping": res.clipped_samples == 0}
    if args.max_deviation is not None and len(res):
        checks[f"max_deviation<={args.max_deviation:g}"] = point.max_deviation <= args.max_deviation
    return _report_checks(checks)


def cmd_sweep(args) -> int:
    stim = _stimulus(args)
    fft_cfg = _fft(args)
    out = _run_dir(args)
    _snapshot(out, args, stimulus=stim.to_dict())
    res = harness.sweep(args.f_start, args.f_stop, args.f_step, args.frames, snr=stim.snr_db,
                        base=stim, fft_cfg=fft_cfg, seed=stim.seed, workers=args.workers)
    harness.emit_report(res, out / "sweep.csv", "csv")
    harness.emit_report(res, out / "sweep.json", "json")
    print(json.dumps(res.summary(), indent=2))
    return _report_checks({
        f"max_deviation<={args.max_deviation:g}": res.max_deviation <= args.max_deviation,
        f"range<={args.max_range:g} for >={args.range_fraction:.0%} of points":
            res.fraction_range_within(args.max_range) >= args.range_fraction,
    })


def _campaign_out(rep, out: Path, name: str) -> int:
    harness.emit_report(rep, out / f"{name}.csv", "csv")
    harness.emit_report(rep, out / f"{name}.json", "json")
    for lvl, res in rep.results.items():
        print(f"{lvl}: {json.dumps(res.summary())}")
    return _report_checks(rep.checks)


def cmd_snr(args) -> int:
    stim = _stimulus(args)
    out = _run_dir(args)
    _snapshot(out, args, stimulus=stim.to_dict())
    rep = harness.snr_campaign(tuple(args.levels), args.f_start, args.f_stop, args.f_step,
                               args.frames, seed=stim.seed, base=stim, fft_cfg=_fft(args),
                               workers=args.workers)
    return _campaign_out(rep, out, "snr")


def cmd_amplitude(args) -> int:
    stim = _stimulus(args)
    out = _run_dir(args)
    _snapshot(out, args, stimulus=stim.to_dict())
    rep = harness.amplitude_campaign(tuple(args.levels), args.attenuation, args.adc_range,
                                     args.f_start, args.f_stop, args.f_step, args.frames,
                                     snr=stim.snr_db, seed=stim.seed, base=stim,
                                     fft_cfg=_fft(args), workers=args.workers)
    return _campaign_out(rep, out, "amplitude")


def cmd_transfer_sim(args) -> int:
    d = load_config_file(args.config) if args.config else {}
    d.update(_parse_set(args.set))
    if args.ddr_gb is not None:
        d["ddr_capacity"] = args.ddr_gb * transfer_sim.GB
    if args.stall:
        d["stalls"] = [tuple(args.stall)]
    cfg = transfer_sim.DatapathConfig.from_dict(d)
    out = _run_dir(args)
    _snapshot(out, args, datapath=cfg.to_dict())
    closed = {
        "cycle_time_s": transfer_sim.cycle_time(cfg),
        "fifo_accrual_bytes": transfer_sim.fifo_accrual(cfg),
        "fifo_fill_bound_bytes": transfer_sim.fifo_fill_bound(cfg),
        "max_survivable_stall_s": transfer_sim.max_survivable_stall(cfg),
    }
    runs = []
    for i in range(args.seeds):
        c = cfg.replace(seed=cfg.seed + i)
        sim = transfer_sim.TransferSimulator(c, trace=args.trace and i == 0)
        runs.append(sim.run(args.duration))
        if sim.trace is not None:
            sim.write_trace_csv(out / "trace.csv")
    lossless = sum(r.lost_bytes == 0 for r in runs)
    report = {"closed_form": closed, "lossless_runs": lossless, "runs": [r.to_dict() for r in runs]}
    (out / "transfer.json").write_text(json.dumps(report, indent=2))
    print(json.dumps(closed, indent=2))
    print(f"lossless runs: {lossless}/{len(runs)}")
    need = args.seeds if args.stall else math.ceil(0.95 * args.seeds)
    checks = {"conservation": all(r.conservation_ok for r in runs)}
    if not args.stall:
        checks[f"lossless>={need}/{args.seeds}"] = lossless >= need
    return _report_checks(checks)


def cmd_resources(args) -> int:
    cfg = distributor.P2SConfig(args.input_lanes, args.sample_bits, args.groups,
                                args.subgroups, args.frame_len)
    out = _run_dir(args)
    _snapshot(out, args)
    cmp = distributor.compare_structures(cfg)
    (out / "resources.json").write_text(json.dumps(cmp, indent=2))
    one, two = cmp["single_stage"], cmp["two_stage"]
    print(f"demux nodes: {one['demux_nodes']} single-stage, {two['demux_nodes']} two-stage "
          f"({cmp['node_reduction']:.2%} fewer; quoted {cmp['node_reduction_published']:.1%})")
    print("fifo utilization: " + ", ".join(f"{k} {v:.2%}" for k, v in two["fifo_utilization"].items()))
    print(f"fifo storage: {one['fifo_kbytes_total']:g} kB single-stage, "
          f"{two['fifo_kbytes_total']:g} kB two-stage ({cmp['fifo_savings']:.2%} saved)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pipefreq", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--out", help="run directory")
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "write a stimulus record and its ADC codes")
    _add_stim_args(p)

    p = add("measure", cmd_measure, "measure every pulse of one stimulus")
    _add_stim_args(p)
    _add_fft_args(p)
    p.add_argument("--literal", action="store_true", help="use the uncorrected vertex formula")
    p.add_argument("--dump-frames", action="store_true", help="export raw frames as CSV")
    p.add_argument("--max-deviation", type=float, help="fail above this deviation (Hz)")

    p = add("sweep", cmd_sweep, "sweep the carrier frequency")
    _add_stim_args(p)
    _add_fft_args(p)
    _add_sweep_args(p)
    p.add_argument("--max-deviation", type=float, default=1.2e6)
    p.add_argument("--max-range", type=float, default=1.5e6)
    p.add_argument("--range-fraction", type=float, default=0.95)

    p = add("snr", cmd_snr, "sweep at several SNR levels")
    _add_stim_args(p)
    _add_fft_args(p)
    _add_sweep_args(p)
    p.add_argument("--levels", type=float, nargs="+", default=list(harness.SNR_LEVELS))

    p = add("amplitude", cmd_amplitude, "sweep at several source amplitudes")
    _add_stim_args(p)
    _add_fft_args(p)
    _add_sweep_args(p)
    p.add_argument("--levels", type=float, nargs="+", default=list(harness.AMPLITUDE_LEVELS_VPP),
                   help="source amplitudes in Vpp")
    p.add_argument("--attenuation", type=float, default=harness.ATTENUATION_DB, help="dB")
    p.add_argument("--adc-range", type=float, default=harness.ADC_RANGE_VPP, help="ADC input range, Vpp")

    p = add("transfer-sim", cmd_transfer_sim, "simulate the acquisition-to-host datapath")
    p.add_argument("--config", help="datapath config (JSON or key = value text)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--duration", type=float, default=600.0, help="simulated seconds")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--ddr-gb", type=float)
    p.add_argument("--stall", type=float, nargs=2, metavar=("START", "SECONDS"),
                   help="replace the first host read after START with a SECONDS-long stall")
    p.add_argument("--trace", action="store_true", help="write the first run's event trace")

    p = add("resources", cmd_resources, "demux node and FIFO arithmetic")
    d = distributor.P2SConfig()
    p.add_argument("--input-lanes", type=int, default=d.input_lanes)
    p.add_argument("--sample-bits", type=int, default=d.sample_bits)
    p.add_argument("--groups", type=int, default=d.groups)
    p.add_argument("--subgroups", type=int, default=d.subgroups)
    p.add_argument("--frame-len", type=int, default=d.frame_len)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
