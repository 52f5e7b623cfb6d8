"""Command line entry point: ``coexsim run | validate | emit-figures``.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, validate_config
from .harness import FIGURES, MissingAxisError, ResultBundle, emit_figure_data, output_root, run_campaign

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

# dedicated flags and the config key each one sets
FLAG_KEYS = {
    "power": "campaign.powers",
    "precoder": "campaign.precoders",
    "mode": "campaign.modes",
    "fpa_nu": "campaign.fpa_nu",
    "fpa_omega": "campaign.fpa_omega",
    "snapshots": "campaign.n_snapshots",
    "realizations": "campaign.n_realizations",
    "seed": "campaign.seed",
    "profile": "campaign.profile",
}
LIST_FLAGS = {"power", "precoder", "mode"}


def _read(path) -> str:
    if path is None:
        return ""
    return Path(path).read_text(encoding="utf-8")


def _toml_value(v) -> str:
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, str):
        try:
            float(v)
            return v
        except ValueError:
            return json.dumps(v)
    return str(v)


def collect_overrides(args) -> list[str]:
    out = []
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is None:
            continue
        if flag in LIST_FLAGS:
            v = [x for item in v for x in item.split(",") if x]
        out.append(f"{key}={_toml_value(v)}")
    out.extend(getattr(args, "set", None) or [])
    return out


def load(args):
    return validate_config(_read(args.config), collect_overrides(args))


def results_dir(args, camp) -> Path:
    if getattr(args, "output", None):
        return Path(args.output)
    out = Path(camp.output_dir)
    return out if out.is_absolute() else Path(output_root(".")) / out


def _add_overrides(p):
    p.add_argument("config", nargs="?", help="TOML configuration (omit for the defaults)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config key (repeatable)")
    p.add_argument("--power", action="append", help="epa, fpa or opa (repeatable or comma separated)")
    p.add_argument("--precoder", action="append", help="mr, rzf or mmmse")
    p.add_argument("--mode", action="append", help="punc or spc")
    p.add_argument("--fpa-nu", dest="fpa_nu", type=float)
    p.add_argument("--fpa-omega", dest="fpa_omega", help="number in (0, 1) or 'alpha'")
    p.add_argument("--snapshots", type=int)
    p.add_argument("--realizations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--profile", choices=("full", "smoke"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coexsim", description="eMBB/URLLC coexistence Monte Carlo campaigns")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a campaign and save the result bundle")
    _add_overrides(run)
    run.add_argument("-o", "--output", help="result directory (default: campaign.output_dir under $COEXSIM_OUTPUT_ROOT)")
    run.add_argument("--figures", action="store_true", help="also emit every figure family")

    val = sub.add_parser("validate", help="check a configuration and print the expanded sweep")
    _add_overrides(val)

    fig = sub.add_parser("emit-figures", help="write plot-ready CSVs from a saved bundle")
    fig.add_argument("bundle", help="result directory written by 'run'")
    fig.add_argument("--figure", action="append", choices=FIGURES, help="figure family (default: all that apply)")
    fig.add_argument("-o", "--output", help="destination (default: <bundle>/figures)")
    return ap


def cmd_validate(args) -> int:
    camp = load(args)
    pts = camp.points()
    print(f"configuration OK: {len(pts)} sweep point(s), {camp.n_snapshots} snapshot(s) x {camp.n_realizations} realization(s)")
    for i, (net, fr, coords) in enumerate(pts):
        print(f"  point {i}: {coords or 'defaults'} -> K={net.K} tau_p={fr.tau_p} T={fr.T} n_d={fr.n_d}")
    return EXIT_OK


def cmd_run(args) -> int:
    camp = load(args)
    out = results_dir(args, camp)

    def progress(pi, si):
        logging.getLogger("coexsim").info("point %d snapshot %d done", pi, si)

    bundle = run_campaign(camp, progress=progress)
    bundle.save(out)
    failed = [p for p in bundle.points if p.error]
    for p in failed:
        print(f"point {p.index} {p.coords} failed: {p.error}", file=sys.stderr)
    print(f"saved {len(bundle.points)} point(s) to {out}")
    if args.figures:
        _emit(bundle, None, out / "figures")
    return EXIT_RUNTIME if failed else EXIT_OK


def _emit(bundle, figures, out_dir) -> None:
    explicit = figures is not None
    for fid in figures or FIGURES:
        try:
            files = emit_figure_data(bundle, fid, out_dir)
            print(f"{fid}: " + ", ".join(str(f) for f in files))
        except MissingAxisError as exc:
            if explicit:
                raise
            print(f"{fid}: skipped ({exc.args[0]})")


def cmd_emit(args) -> int:
    bundle = ResultBundle.load(args.bundle)
    _emit(bundle, args.figure, Path(args.output) if args.output else Path(args.bundle) / "figures")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "validate": cmd_validate, "emit-figures": cmd_emit}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, MissingAxisError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
