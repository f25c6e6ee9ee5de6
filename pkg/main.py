#!/usr/bin/env python3
"""
Hartree-Fock Analysis Lab
Main entry point for the command-line application
"""

from typing import Optional, Sequence
import argparse
import logging
import sys

from cli.commands import cmd_dump_integrals, cmd_hessian, cmd_radial, cmd_scf, cmd_survey
from cli.report import compare_to_golden, load_golden
from core.molecule.molbasis import InputError
from core.radial.radial import ConvergenceError
from utils.utils import setup_logging

logger = logging.getLogger(__name__)

PROG = "hf-lab"


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="write the JSON report here instead of stdout")
    common.add_argument("--seed", type=int, default=None,
                        help="random seed; for scf, start from the seeded random guess instead of the core guess")
    common.add_argument("--tol-energy", dest="tol_energy", type=float, default=None)
    common.add_argument("--max-iter", dest="max_iter", type=int, default=None)
    common.add_argument("--standard-units", dest="standard_units", action="store_true",
                        help="also print energies doubled to the -Laplacian/2 convention")
    common.add_argument("--golden", help="compare the report against a golden JSON report")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    return common


def _scf_parser() -> argparse.ArgumentParser:
    scf = argparse.ArgumentParser(add_help=False)
    scf.add_argument("input", help="molecule/basis JSON document")
    scf.add_argument("--tol-commutator", dest="tol_commutator", type=float, default=None)
    scf.add_argument("--damping", type=float, default=None)
    scf.add_argument("--trace", help="write the SCF iteration trace CSV here")
    return scf


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="Hartree-Fock solver and analysis lab")
    commands = parser.add_subparsers(dest="command", required=True)
    common, scf = _common_parser(), _scf_parser()

    p = commands.add_parser("scf", parents=[common, scf], help="solve from the core guess")
    p.set_defaults(handler=cmd_scf)

    p = commands.add_parser("survey", parents=[common, scf], help="multi-start survey of critical points")
    p.add_argument("--starts", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--cluster-tol", dest="cluster_tol", type=float, default=None)
    p.add_argument("--csv", help="write the per-run table here")
    p.set_defaults(handler=cmd_survey)

    p = commands.add_parser("hessian", parents=[common, scf], help="Hessian structure certificates")
    p.add_argument("--epsilon-split", dest="epsilon_split", nargs="+", default=None,
                   help="split parameter(s), or 'sweep' for 0.5, 1 and 1.5 times min(-e_i)")
    p.set_defaults(handler=cmd_hessian)

    p = commands.add_parser("radial", parents=[common], help="radial s-orbital Hartree-Fock on a log grid")
    p.add_argument("--Z", type=float, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--rmax", type=float, default=None)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--window", type=float, nargs=2, default=None, metavar=("R0", "R1"))
    p.add_argument("--csv", help="write the tail table here")
    p.set_defaults(handler=cmd_radial)

    p = commands.add_parser("dump-integrals", parents=[common], help="write the binary integral dump")
    p.add_argument("input", help="molecule/basis JSON document")
    p.add_argument("dump", help="output path of the binary dump")
    p.set_defaults(handler=cmd_dump_integrals)
    return parser


def _fail(message: str, code: int) -> int:
    sys.stderr.write(f"{PROG}: error: {' '.join(str(message).split())}\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main application entry point"""
    args = build_parser().parse_args(argv)
    setup_logging("DEBUG" if args.verbose else "WARNING" if args.quiet else None)

    try:
        report = args.handler(args)
    except InputError as e:
        return _fail(str(e), 1)
    except ConvergenceError as e:
        return _fail(str(e), 2)

    if args.golden:
        try:
            golden = load_golden(args.golden)
        except (OSError, ValueError) as e:
            return _fail(f"Cannot read golden {args.golden}: {e}", 1)
        mismatches = compare_to_golden(report.to_dict(), golden)
        report.results["golden_mismatches"] = mismatches
        for line in mismatches:
            logger.warning(f"Golden mismatch {line}")

    report.write(args.out)
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
