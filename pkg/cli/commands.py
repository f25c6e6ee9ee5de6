from argparse import Namespace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple
import logging

import numpy as np

from cli.report import RunReport, energy_entry
from core.analysis.spectra import (PerturbationW, assemble_hessian, directional_derivative_check, epsilon_sweep,
                                   lm_certificate, rq_identity_check, rs_positivity_check)
from core.analysis.survey import SurveyConfig, run_survey, write_survey_csv
from core.hf.hfcore import energy_components
from core.hf.scf import (CriticalPoint, GuessKind, ScfOptions, koopmans_check, orbital_energy_bound_check,
                         random_generator, scf_solve, write_trace_csv)
from core.integrals.integrals import IntegralTables, compute_tables, dump_tables, overlap_condition
from core.molecule.molbasis import BasisSet, InputError, Molecule, RunOptions, parse_input
from core.radial.grid import log_grid
from core.radial.radial import (DECAY_FRACTION, GridTooSmallError, RadialOptions, decay_fit, farfield_q_check,
                                h2norm_report, radial_scf, virial_report, weighted_tail_norm, write_tail_csv)

logger = logging.getLogger(__name__)

RQ_SAMPLES = 10


def load_input(path) -> Tuple[Molecule, BasisSet, RunOptions]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise InputError(f"Cannot read input {path}: {e.strerror or e}") from e
    return parse_input(text)


def scf_options(run_options: RunOptions, args: Namespace) -> ScfOptions:
    """YAML defaults < document 'scf' entry < command-line flags"""
    overrides: Dict[str, Any] = dict(run_options.scf)
    for key in ("max_iter", "tol_energy", "tol_commutator", "damping"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    try:
        return ScfOptions.from_settings(overrides)
    except (TypeError, ValueError) as e:
        raise InputError(str(e)) from e


def input_echo(molecule: Molecule, basis: BasisSet, run_options: RunOptions, path) -> Dict[str, Any]:
    return {
        "path": str(path),
        "title": run_options.title,
        "source_convention": run_options.source_convention.value,
        "convention": "paper",
        "molecule": molecule.to_dict(),
        "basis": {"name": basis.name, "signature": basis.signature(), "n_functions": basis.n_functions},
    }


def _critical_point_block(cp: CriticalPoint, molecule: Molecule, tables: IntegralTables,
                          standard_units: bool) -> Dict[str, Any]:
    return {
        "energy": energy_entry(cp.energy, standard_units),
        "orbital_energies": [energy_entry(x, standard_units) for x in cp.orbitals.e],
        "critical_point": cp.to_dict(),
        "energy_components": energy_components(cp.orbitals, tables).to_dict(),
        "koopmans": koopmans_check(cp, tables).to_dict() if cp.certified else None,
        "orbital_energy_bound": orbital_energy_bound_check(cp, tables),
        "nuclear_repulsion": molecule.nuclear_repulsion(),
    }


def _solve(args: Namespace, guess: GuessKind = GuessKind.CORE, seed: Tuple[int, ...] = (0,)):
    molecule, basis, run_options = load_input(args.input)
    options = scf_options(run_options, args)
    tables = compute_tables(molecule, basis)
    result = scf_solve(molecule, basis, options, guess=guess, seed=seed, tables=tables)
    if getattr(args, "trace", None):
        write_trace_csv(result.trace, args.trace)
    results: Dict[str, Any] = {
        "outcome": result.outcome.value,
        "iterations": len(result.trace.records),
        "initial_energy": result.trace.initial_energy,
        "descent_violations": result.trace.descent_violations(),
        "upper_bound_violations": result.trace.upper_bound_violations(),
        "overlap_condition": overlap_condition(tables).to_dict(),
        "scf_options": options.to_dict(),
    }
    echo = input_echo(molecule, basis, run_options, args.input)
    return molecule, tables, result, results, echo


def cmd_scf(args: Namespace) -> RunReport:
    """Core guess by default; --seed s starts from the random guess of survey run (s, 0)"""
    if args.seed is None:
        seeds: Dict[str, Any] = {"guess": GuessKind.CORE.value}
        molecule, tables, result, results, echo = _solve(args)
    else:
        if args.seed < 0:
            raise InputError(f"--seed must be non-negative, got {args.seed}")
        seeds = {"guess": GuessKind.RANDOM.value, "seed": args.seed}
        molecule, tables, result, results, echo = _solve(args, GuessKind.RANDOM, (args.seed, 0))
    if result.critical_point is not None:
        results.update(_critical_point_block(result.critical_point, molecule, tables, args.standard_units))
    return RunReport("scf", echo, results, seeds, result.exit_code)


def cmd_survey(args: Namespace) -> RunReport:
    molecule, basis, run_options = load_input(args.input)
    options = scf_options(run_options, args)
    try:
        config = SurveyConfig.from_settings(
            {"n_starts": args.starts, "seed": args.seed, "epsilon": args.epsilon, "cluster_tol": args.cluster_tol},
            scf=options)
    except (TypeError, ValueError) as e:
        raise InputError(str(e)) from e
    tables = compute_tables(molecule, basis)
    report = run_survey(molecule, basis, config, tables)
    if args.csv:
        write_survey_csv(report, args.csv)
    results = report.to_dict()
    if args.standard_units:
        results["J_est_standard"] = 2.0 * report.j_est
        for cluster in results["clusters"]:
            cluster["energy_standard"] = 2.0 * cluster["energy"]
    echo = input_echo(molecule, basis, run_options, args.input)
    return RunReport("survey", echo, results, {"seed": config.seed, "n_starts": config.n_starts})


def _epsilon_values(raw: Optional[List[str]]) -> Optional[List[float]]:
    if not raw or raw == ["sweep"]:
        return None
    try:
        values = [float(x) for x in raw]
    except ValueError as e:
        raise InputError(f"--epsilon-split takes numbers or 'sweep': {e}") from e
    if any(not x > 0.0 for x in values):
        raise InputError("--epsilon-split values must be positive")
    return values


def _rq_block(cp: CriticalPoint, tables: IntegralTables, seed: int) -> Dict[str, Any]:
    rng = random_generator((seed, 3))
    n, N = cp.orbitals.C.shape
    checks = [rq_identity_check(cp, PerturbationW.random(n, N, rng), tables) for _ in range(RQ_SAMPLES)]
    first = checks[0]
    return {
        "lhs": first.lhs,
        "rhs": first.rhs,
        "pair_integral": first.pair_integral,
        "samples": len(checks),
        "max_discrepancy": max(c.discrepancy for c in checks),
        "min_value": min(min(c.lhs, c.rhs, c.pair_integral) for c in checks),
        "passed": all(c.passed for c in checks),
    }


def cmd_hessian(args: Namespace) -> RunReport:
    molecule, tables, result, results, echo = _solve(args)
    seeds = {"guess": GuessKind.CORE.value, "seed": args.seed or 0}
    cp = result.critical_point
    if cp is None:
        return RunReport("hessian", echo, results, seeds, result.exit_code)
    results.update(_critical_point_block(cp, molecule, tables, args.standard_units))
    if not cp.certified:
        logger.warning("Critical point not certified; Hessian checks skipped")
        results["hessian_skipped"] = "critical point not certified"
        return RunReport("hessian", echo, results, seeds, result.exit_code)
    if not np.all(cp.orbitals.e < 0.0):
        raise InputError(f"Orbital energies {cp.orbitals.e.tolist()} are not all negative; no spectral split")

    seed = args.seed or 0
    raw = args.epsilon_split
    values = _epsilon_values(raw)
    if raw == ["sweep"]:
        certificates = epsilon_sweep(cp, tables)
    else:
        epsilons = values or [float(np.min(-cp.orbitals.e))]
        certificates = [lm_certificate(assemble_hessian(cp, tables, eps)) for eps in epsilons]

    blocks = assemble_hessian(cp, tables)
    results.update({
        "rs_positivity": rs_positivity_check(cp, tables).to_dict(),
        "rq_identity": _rq_block(cp, tables, seed),
        "finite_difference": directional_derivative_check(cp, tables, blocks, seed=seed).to_dict(),
        "certificates": [c.to_dict() for c in certificates],
        "all_certificates_pass": all(c.passed for c in certificates),
    })
    return RunReport("hessian", echo, results, seeds, result.exit_code)


def cmd_radial(args: Namespace) -> RunReport:
    try:
        grid = log_grid(r_max=args.rmax, n_points=args.points)
        options = RadialOptions.from_settings({"tol_energy": args.tol_energy, "max_iter": args.max_iter})
    except (TypeError, ValueError) as e:
        raise InputError(str(e)) from e
    if args.Z <= 0 or args.N < 1:
        raise InputError(f"Need Z > 0 and N ≥ 1, got Z={args.Z}, N={args.N}")
    try:
        orbs = radial_scf(args.Z, args.N, grid, options)
    except (GridTooSmallError, ValueError) as e:
        raise InputError(str(e)) from e
    if args.csv:
        write_tail_csv(orbs, args.csv)
    window = tuple(args.window) if args.window else None
    eps_tilde = DECAY_FRACTION * float(np.min(-orbs.e))
    try:
        fit = decay_fit(orbs, window)
    except ValueError as e:
        raise InputError(str(e)) from e
    results = {
        "orbitals": orbs.to_dict(),
        "energy": energy_entry(orbs.energy, args.standard_units),
        "orbital_energies": [energy_entry(x, args.standard_units) for x in orbs.e],
        "decay_fit": fit.to_dict(),
        "decay_bound_passed": all(fit.within_decay_bound),
        "far_field": farfield_q_check(orbs).to_dict(),
        "h2norm": h2norm_report(orbs).to_dict(),
        "virial": virial_report(orbs).to_dict(),
        "weighted_tail_norm": weighted_tail_norm(orbs, eps_tilde).to_dict(),
        "options": options.to_dict(),
    }
    echo = {"Z": args.Z, "N": args.N, "grid": grid.to_dict(), "convention": "paper"}
    return RunReport("radial", echo, results)


def cmd_dump_integrals(args: Namespace) -> RunReport:
    molecule, basis, run_options = load_input(args.input)
    tables = compute_tables(molecule, basis)
    dump_tables(tables, args.dump)
    results = {"path": str(args.dump), "n_functions": tables.n_functions, "l_max": tables.l_max,
               "overlap_condition": overlap_condition(tables).to_dict()}
    return RunReport("dump-integrals", input_echo(molecule, basis, run_options, args.input), results)
