"""relayfd command line: run benchmark scenarios, detect faults in recorded waveforms."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from . import harness
from .signal_gen import read_waveform_csv

log = logging.getLogger("relayfd")


def _json_default(obj):
    if hasattr(obj, "item"):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _print_json(data):
    print(json.dumps(data, indent=2, default=_json_default))


def cmd_run(args):
    report = harness.run_scenario(args.spec, args.detectors, args.out, args.seed,
                                  nominal_hz=args.nominal)
    _print_json(report.summary())
    if args.out:
        log.info("wrote %s", Path(args.out) / f"{report.scenario_id}_indices.csv")
    return 0


def cmd_suite(args):
    reports = harness.run_suite(args.out, args.seed, args.detectors, workers=args.workers)
    _print_json({name: r.summary() for name, r in reports.items()})
    return 0


def _load(args):
    return read_waveform_csv(args.input, fs_hz=args.fs)


def cmd_detect(args):
    w = _load(args)
    result = harness.detect_waveform(w, args.detector, freq_hz=args.freq, seed=args.seed,
                                     consecutive_m=args.consecutive)
    raw = result.pop("raw")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        name = result["detector"]
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["k", "t_s", f"index_{name}_raw", f"verdict_{name}"])
            for k, (t, v) in enumerate(zip(w.times, raw)):
                fired = result["detected"] and k >= result["detection_k"]
                writer.writerow([k, repr(float(t)), "" if math.isnan(v) else repr(float(v)),
                                 int(fired)])
    _print_json(result)
    return 0


def cmd_calibrate(args):
    w = _load(args)
    _print_json(harness.calibrate_waveform(w, args.detector, freq_hz=args.freq, seed=args.seed))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relayfd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="synthesize one scenario and benchmark detectors on it")
    p.add_argument("--spec", required=True,
                   help="scenario JSON file, or a canonical scenario letter A-E")
    p.add_argument("--detectors", default=",".join(harness.DETECTORS),
                   help="comma-separated subset of sc,pc,ocms,ica (default: all)")
    p.add_argument("--seed", type=int, default=None, help="override the scenario noise seed")
    p.add_argument("--out", default=None, help="directory for the index CSV and report JSON")
    p.add_argument("--nominal", type=float, default=50.0, help="nominal system frequency, Hz")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run the five canonical scenarios")
    p.add_argument("--detectors", default=",".join(harness.DETECTORS))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_suite)

    for name, func, text in (("detect", cmd_detect, "detect a fault in a recorded waveform"),
                             ("calibrate", cmd_calibrate, "threshold from a fault-free record")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--input", required=True, help="waveform CSV with columns k,t_s,i")
        p.add_argument("--detector", required=True, choices=harness.DETECTORS)
        p.add_argument("--fs", type=float, default=None,
                       help="sampling rate in Hz (default: inferred from t_s)")
        p.add_argument("--freq", type=float, default=50.0, help="system frequency, Hz")
        p.add_argument("--seed", type=int, default=0, help="FastICA seed")
        if name == "detect":
            p.add_argument("--consecutive", type=int, default=3,
                           help="samples above threshold needed to trip")
            p.add_argument("--out", default=None, help="write the per-sample index to this CSV")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"relayfd: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
