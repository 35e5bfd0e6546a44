"""Command-line entry point: ``aircorrect <verb> [--config PATH] [--seed N] [--out DIR]``.

Exit status is 0 on success, 2 when some cells failed and 1 on a config or
I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .bundle import describe_bundle
from .data import write_station_csv
from .errors import AirCorrectError, ConfigError

log = logging.getLogger("aircorrect")

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aircorrect", description="Forecast bias correction experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="verb", required=True)

    for verb, help_text in (
        ("train", "fit the configured preset on every cell and report"),
        ("compare", "run all comparison presets on identical splits"),
        ("sweep", "evaluate across forecast horizons"),
    ):
        p = sub.add_parser(verb, help=help_text)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=_u64, help="override the config seed")
        p.add_argument("--out", help="override the output directory")

    p = sub.add_parser("synth", help="write a synthetic station CSV")
    p.add_argument("--config", help="optional JSON config; its data.synthetic block is used")
    p.add_argument("--seed", type=_u64, default=None)
    p.add_argument("--out", required=True, help="output directory (writes synthetic.csv)")
    p.add_argument("--hours", type=int, default=None, help="series length in hours")
    p.add_argument("--stations", type=int, default=None, help="number of stations")
    p.add_argument("--offset", type=float, default=None)
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--noise-sd", type=float, default=None)

    p = sub.add_parser("report", help="verify a run directory and print its metrics")
    p.add_argument("--config", help="config whose 'out' names the run directory")
    p.add_argument("--seed", type=_u64, default=None, help="accepted for uniformity; unused")
    p.add_argument("--out", help="run directory")

    p = sub.add_parser("inspect-bundle", help="summarise a saved model bundle")
    p.add_argument("bundle", help="bundle JSON path")
    return parser


def _run_verb(args) -> int:
    cfg = pipeline.parse_config(args.config, seed=args.seed, out=args.out)
    runner = {"train": pipeline.run_experiment, "compare": pipeline.run_comparison,
              "sweep": pipeline.horizon_sweep}[args.verb]
    art = runner(cfg)
    for w in art.warnings:
        print(f"warning: {w}", file=sys.stderr)
    _print_metrics(art.out_dir / "metrics.csv")
    print(f"wrote {len(art.files)} files to {art.out_dir}")
    if art.failures:
        for f in art.failures:
            print(f"failed: {f['station']}/{f['pollutant']}/{f['horizon_h']}h "
                  f"{f['model'] or '(cell)'}: {f['error']}: {f['message']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _print_metrics(path: Path) -> None:
    if not path.exists():
        return
    rows = pipeline.read_metrics(path)
    if not rows:
        return
    print(f"{'station':<10}{'pollutant':<10}{'h':>4}  {'model':<16}{'mae':>10}{'rmse':>10}{'r2':>8}{'acc%':>9}")
    for r in rows:
        print(f"{r['station']:<10}{r['pollutant']:<10}{r['horizon_h']:>4}  {r['model']:<16}"
              f"{float(r['mae']):>10.4g}{float(r['rmse']):>10.4g}{float(r['r2']):>8.3f}"
              f"{float(r['acc_improve_pct']):>9.2f}")


def _synth(args) -> int:
    spec = {}
    if args.config:
        cfg = pipeline.parse_config(args.config)
        if cfg.synthetic is None:
            raise ConfigError("config data source is not synthetic")
        spec = dict(cfg.synthetic)
        spec.setdefault("seed", cfg.seed)
    for key, val in (("seed", args.seed), ("n_hours", args.hours), ("stations", args.stations),
                     ("offset", args.offset), ("scale", args.scale), ("noise_sd", args.noise_sd)):
        if val is not None:
            spec[key] = val
    tables = pipeline.synthetic_tables(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "synthetic.csv"
    write_station_csv(tables.values(), path)
    print(f"wrote {path} ({len(tables)} station(s))")
    return EXIT_OK


def _report(args) -> int:
    if args.out:
        out = Path(args.out)
    elif args.config:
        out = Path(pipeline.parse_config(args.config).out)
    else:
        raise ConfigError("report needs --out or --config")
    if not (out / "manifest.json").exists():
        raise FileNotFoundError(f"{out}/manifest.json not found")
    bad = pipeline.verify_manifest(out)
    manifest = json.loads((out / "manifest.json").read_text())
    _print_metrics(out / "metrics.csv")
    for w in manifest.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)
    if bad:
        for rel in bad:
            print(f"hash mismatch: {rel}", file=sys.stderr)
        return EXIT_ERROR
    print(f"manifest verified: {len(manifest['files'])} files")
    return EXIT_PARTIAL if manifest.get("failures") else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb in ("train", "compare", "sweep"):
            return _run_verb(args)
        if args.verb == "synth":
            return _synth(args)
        if args.verb == "report":
            return _report(args)
        print(json.dumps(describe_bundle(args.bundle), indent=2))
        return EXIT_OK
    except (AirCorrectError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
