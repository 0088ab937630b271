"""Command-line front end.

Exit codes: 0 ok, 2 invalid manifest, 3 estimator precondition, 4 missing
data, 5 calibration outside the admissible beta range.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from pathlib import Path

from . import runner
from .calibration import CalibrationError, calibration_path, write_calibration
from .estimators import PreconditionError
from .lattice import BallDomain
from .loop_erasure import DEFAULT_ILERW_TRUNCATION, ilerw_sample, lerw_sample
from .manifest import ManifestError, load_manifest
from .pathio import write_path
from .rng import SeedSpec
from .walks import srw_until_exit

EXIT_OK, EXIT_MANIFEST, EXIT_PRECONDITION, EXIT_MISSING, EXIT_CALIBRATION = 0, 2, 3, 4, 5
ENV_OUT = "LERWLAB_OUT"
ENV_WORKERS = "LERWLAB_WORKERS"

log = logging.getLogger("lerwlab")


def _resolve(args, man):
    """Output directory and worker count: flag, then environment, then manifest, then default."""
    out = args.out or os.environ.get(ENV_OUT) or man.output or "results"
    if args.workers is not None:
        workers = args.workers
    elif os.environ.get(ENV_WORKERS):
        try:
            workers = int(os.environ[ENV_WORKERS])
        except ValueError:
            raise ManifestError(f"{ENV_WORKERS} must be an integer") from None
    else:
        workers = man.workers
    return Path(out), max(1, workers)


def _load(args):
    man = load_manifest(args.manifest)
    if args.seed_override is not None:
        if not 0 <= args.seed_override < 2**64:
            raise ManifestError("seed override out of range", field="seed")
        man = man.with_seed(args.seed_override)
    return man


def cmd_run(args) -> int:
    man = _load(args)
    out, workers = _resolve(args, man)
    new = runner.run_manifest(man, out, workers)
    print(f"{man.name}: {len(new)} new records in {out / runner.RECORDS}")
    return EXIT_OK


def _analysis(args):
    if not args.analysis:
        return None
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        with open(args.analysis) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as e:
        raise ManifestError(f"cannot read analysis spec: {e}") from None
    if not cp.has_section("report"):
        raise ManifestError("analysis spec needs a [report] section")
    return dict(cp["report"])


def cmd_report(args) -> int:
    man = _load(args)
    out, _ = _resolve(args, man)
    res = runner.report(man, out, _analysis(args), args.calibration)
    for f in res.get("fits", []):
        fit = f["fit"]
        line = f"exponent {fit['exponent']:.4f} [{fit['exponent_ci'][0]:.4f}, {fit['exponent_ci'][1]:.4f}]"
        if "consistent" in f:
            line += f" expected {f['expected_exponent']:.4f}: {'consistent' if f['consistent'] else 'INCONSISTENT'}"
        print(line)
    if "ratio_test" in res:
        print("ratio test", "passed" if res["ratio_test"]["passed"] else "FAILED")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    man = _load(args)
    out, workers = _resolve(args, man)
    cal = runner.calibrate(man, out, workers)
    print(f"beta = {cal.beta:.4f}, 95% CI [{cal.ci[0]:.4f}, {cal.ci[1]:.4f}]")
    if not cal.accepted:
        print("calibration violates paper bound: beta must lie in (1, 5/3]", file=sys.stderr)
        return EXIT_CALIBRATION
    if cal.warning:
        print(f"warning: {cal.warning}", file=sys.stderr)
    dest = Path(args.calibration) if args.calibration else calibration_path()
    write_calibration(dest, cal.beta, cal.ci, man.hash, scales=[p for p in cal.fit["scales"]],
                      trials=man.trials, seed=man.seed)
    print(f"wrote {dest}")
    return EXIT_OK


def cmd_dump_path(args) -> int:
    seed = SeedSpec(args.seed, args.trial)
    if args.kind == "walk":
        path = srw_until_exit(BallDomain(args.m), (0, 0, 0), seed, m=args.m)
    elif args.kind == "lerw":
        path = lerw_sample(BallDomain(args.m), seed, m=args.m)
    else:
        path = ilerw_sample(args.m, seed, args.truncation)
    write_path(args.file, path)
    print(f"wrote {len(path)} steps to {args.file}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lerwlab", description="Monte Carlo experiments on 3D loop-erased random walk.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--manifest", required=True, help="experiment manifest (INI)")
        sp.add_argument("--out", help=f"results directory (env {ENV_OUT})")
        sp.add_argument("--workers", type=int, help=f"worker processes (env {ENV_WORKERS})")
        sp.add_argument("--seed-override", type=int, help="replace the manifest seed")

    common(sub.add_parser("run", help="execute or resume a manifest"))
    sp = sub.add_parser("report", help="fit / ratio analysis over completed cells")
    common(sp)
    sp.add_argument("--analysis", help="INI file with a [report] section (default: the manifest's own)")
    sp.add_argument("--calibration", help="beta calibration file to compare against")
    sp = sub.add_parser("calibrate-beta", help="fit beta from a length manifest and write the calibration file")
    common(sp)
    sp.add_argument("--calibration", help="where to write the calibration (default: the active calibration file)")
    sp = sub.add_parser("dump-path", help="write one sampled path in the binary path format")
    sp.add_argument("--m", type=float, required=True)
    sp.add_argument("--kind", choices=("walk", "lerw", "ilerw"), default="lerw")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trial", type=int, default=0)
    sp.add_argument("--truncation", type=float, default=DEFAULT_ILERW_TRUNCATION)
    sp.add_argument("--file", required=True)
    return p


COMMANDS = {"run": cmd_run, "report": cmd_report, "calibrate-beta": cmd_calibrate, "dump-path": cmd_dump_path}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ManifestError as e:
        print(f"error: manifest {e}", file=sys.stderr)
        return EXIT_MANIFEST
    except PreconditionError as e:
        print(f"error: precondition failed in {e}", file=sys.stderr)
        return EXIT_PRECONDITION
    except runner.MissingDataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except CalibrationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
