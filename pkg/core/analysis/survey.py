from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union
import csv
import logging

import numpy as np
from PySide6.QtCore import QRunnable, QThreadPool
from scipy.cluster.hierarchy import fcluster, linkage

from config.settings import settings_manager
from core.hf.scf import GuessKind, ScfOptions, ScfOutcome, scf_solve
from core.integrals.integrals import IntegralTables, compute_tables
from core.molecule.molbasis import BasisSet, Molecule
from utils.utils import default_on_exception, worker_count

logger = logging.getLogger(__name__)

KOOPMANS_SLACK = 1e-6

UNCERTIFIED = "uncertified"
ERROR = "error"


@dataclass(frozen=True)
class SurveyConfig:
    n_starts: int = 100
    seed: int = 0
    epsilon: float = 0.01
    cluster_tol: float = 1e-6
    scf: ScfOptions = field(default_factory=ScfOptions)

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError(f"n_starts must be at least 1, got {self.n_starts}")
        if not self.cluster_tol > 0.0:
            raise ValueError(f"cluster_tol must be positive, got {self.cluster_tol}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @classmethod
    def from_settings(cls, overrides: Optional[Dict[str, Any]] = None,
                      scf: Optional[ScfOptions] = None) -> "SurveyConfig":
        defaults = settings_manager.settings.survey
        values = {"n_starts": defaults.n_starts, "seed": defaults.seed,
                  "epsilon": defaults.epsilon, "cluster_tol": defaults.cluster_tol}
        for key, value in (overrides or {}).items():
            if key not in values:
                raise ValueError(f"Unknown survey option: {key}")
            if value is not None:
                values[key] = type(values[key])(value)
        return cls(scf=scf or ScfOptions.from_settings(), **values)

    def with_starts(self, n_starts: int) -> "SurveyConfig":
        return SurveyConfig(n_starts, self.seed, self.epsilon, self.cluster_tol, self.scf)

    def to_dict(self) -> Dict[str, Any]:
        return {"n_starts": self.n_starts, "seed": self.seed, "epsilon": self.epsilon,
                "cluster_tol": self.cluster_tol, "scf": self.scf.to_dict()}


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one seeded SCF start"""
    index: int
    seed: Tuple[int, ...]
    outcome: str
    energy: Optional[float] = None
    orbital_energies: Tuple[float, ...] = ()
    residual: Optional[float] = None
    initial_energy: Optional[float] = None
    descent_violations: int = 0
    degenerate: bool = False

    @property
    def certified(self) -> bool:
        return self.outcome == ScfOutcome.CONVERGED.value

    def to_dict(self) -> Dict[str, Any]:
        return {"index": self.index, "seed": list(self.seed), "outcome": self.outcome, "energy": self.energy,
                "orbital_energies": list(self.orbital_energies), "residual": self.residual,
                "initial_energy": self.initial_energy, "descent_violations": self.descent_violations,
                "degenerate": self.degenerate}


@dataclass(frozen=True)
class Cluster:
    cluster_id: int
    energy: float
    multiplicity: int
    eps_min: Tuple[float, ...]
    eps_max: Tuple[float, ...]
    degenerate: bool
    members: Tuple[int, ...]

    @property
    def highest_orbital_energy(self) -> float:
        return self.eps_max[-1]

    def to_dict(self) -> Dict[str, Any]:
        return {"cluster_id": self.cluster_id, "energy": self.energy, "multiplicity": self.multiplicity,
                "eps_min": list(self.eps_min), "eps_max": list(self.eps_max), "degenerate": self.degenerate}


@dataclass
class SurveyReport:
    n_electrons: int
    config: SurveyConfig
    runs: List[RunRecord]
    clusters: List[Cluster]
    j_est: float = 0.0
    gamma_census: int = 0
    below_threshold_census: int = 0
    contract_violations: int = 0
    unexplored_minimum_flags: List[int] = field(default_factory=list)

    @property
    def failures(self) -> Dict[str, int]:
        counts = {ScfOutcome.OSCILLATING.value: 0, ScfOutcome.MAX_ITER.value: 0, UNCERTIFIED: 0, ERROR: 0}
        for run in self.runs:
            if run.outcome in counts:
                counts[run.outcome] += 1
        return counts

    @property
    def descent_violations(self) -> int:
        """Runs whose undamped trace broke the bivariate descent"""
        if self.config.scf.damping > 0.0:
            return 0
        return sum(1 for run in self.runs if run.descent_violations > 0)

    def cluster_of(self, index: int) -> Optional[int]:
        for cluster in self.clusters:
            if index in cluster.members:
                return cluster.cluster_id
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_electrons": self.n_electrons,
            "config": self.config.to_dict(),
            "clusters": [c.to_dict() for c in self.clusters],
            "J_est": self.j_est,
            "gamma_census": self.gamma_census,
            "below_threshold_census": self.below_threshold_census,
            "contract_violations": self.contract_violations,
            "unexplored_minimum_flags": list(self.unexplored_minimum_flags),
            "failures": self.failures,
            "descent_violations": self.descent_violations,
            "n_certified": sum(1 for run in self.runs if run.certified),
        }


@dataclass(frozen=True)
class DoublingResult:
    n_starts: int
    epsilons: Tuple[float, ...]
    single: Tuple[Tuple[int, int, int], ...]
    doubled: Tuple[Tuple[int, int, int], ...]

    @property
    def stable(self) -> bool:
        """Below-threshold counts agree for every epsilon"""
        return all(a[1] == b[1] for a, b in zip(self.single, self.doubled))

    def to_dict(self) -> Dict[str, Any]:
        return {"n_starts": self.n_starts, "epsilons": list(self.epsilons),
                "single": [list(x) for x in self.single], "doubled": [list(x) for x in self.doubled],
                "stable": self.stable}


class ScfStartWorker(QRunnable):
    """Runs one indexed job and stores its result in a pre-allocated slot"""

    def __init__(self, slots: List[Any], index: int, job: Callable[[int], Any]):
        super().__init__()
        self.slots = slots
        self.index = index
        self.job = job

    def run(self):
        self.slots[self.index] = self.job(self.index)


def run_indexed(job: Callable[[int], Any], count: int) -> List[Any]:
    """Evaluate job(0..count-1); parallel on a QThreadPool when HF_LAB_THREADS > 1"""
    slots: List[Any] = [None] * count
    workers = worker_count()
    if workers <= 1 or count <= 1:
        for index in range(count):
            slots[index] = job(index)
        return slots
    pool = QThreadPool()
    pool.setMaxThreadCount(workers)
    for index in range(count):
        pool.start(ScfStartWorker(slots, index, job))
    pool.waitForDone()
    return slots


def _single_start(molecule: Molecule, basis: BasisSet, tables: IntegralTables, options: ScfOptions,
                  seed: Tuple[int, ...], index: int, guess: GuessKind = GuessKind.RANDOM) -> RunRecord:
    def solve() -> RunRecord:
        result = scf_solve(molecule, basis, options, guess=guess, seed=seed, tables=tables)
        trace = result.trace
        if result.critical_point is None:
            return RunRecord(index, seed, result.outcome.value, initial_energy=trace.initial_energy,
                             descent_violations=trace.descent_violations())
        cp = result.critical_point
        outcome = result.outcome.value if cp.certified else UNCERTIFIED
        return RunRecord(index, seed, outcome, cp.energy, tuple(float(x) for x in cp.orbitals.e), cp.residual,
                         trace.initial_energy, trace.descent_violations(), cp.degenerate)

    record = default_on_exception(None, solve)
    return record if record is not None else RunRecord(index, seed, ERROR)


def collect_runs(molecule: Molecule, basis: BasisSet, config: SurveyConfig,
                 tables: Optional[IntegralTables] = None) -> List[RunRecord]:
    """n_starts seeded random starts; run i uses seed (config.seed, i)"""
    tables = tables if tables is not None else compute_tables(molecule, basis)

    def job(index: int) -> RunRecord:
        return _single_start(molecule, basis, tables, config.scf, (config.seed, index), index)

    runs = run_indexed(job, config.n_starts)
    return sorted(runs, key=lambda run: run.index)


def cluster_runs(runs: Sequence[RunRecord], cluster_tol: float) -> List[Cluster]:
    """Single-linkage clustering of certified energies; clusters ordered by energy"""
    certified = [run for run in runs if run.certified]
    if not certified:
        return []
    energies = np.array([run.energy for run in certified])
    if len(certified) == 1:
        labels = np.array([1])
    else:
        labels = fcluster(linkage(energies[:, None], method="single"), t=cluster_tol, criterion="distance")

    groups: Dict[int, List[RunRecord]] = {}
    for label, run in zip(labels, certified):
        groups.setdefault(int(label), []).append(run)
    ordered = sorted(groups.values(), key=lambda members: min(m.energy for m in members))

    clusters = []
    for cluster_id, members in enumerate(ordered):
        representative = min(members, key=lambda m: (m.energy, m.index))
        eps = np.array([m.orbital_energies for m in members])
        clusters.append(Cluster(
            cluster_id=cluster_id, energy=float(representative.energy), multiplicity=len(members),
            eps_min=tuple(float(x) for x in eps.min(axis=0)), eps_max=tuple(float(x) for x in eps.max(axis=0)),
            degenerate=any(m.degenerate for m in members), members=tuple(m.index for m in members)))
    return clusters


def _floor_runs(molecule: Molecule, basis: BasisSet, config: SurveyConfig,
                tables: IntegralTables) -> List[RunRecord]:
    reduced = molecule.with_electrons(molecule.n_electrons - 1)
    runs = collect_runs(reduced, basis, config, tables)
    core = _single_start(reduced, basis, tables, config.scf, (config.seed, -1), -1, GuessKind.CORE)
    return runs + [core]


def _floor_from_runs(runs: Sequence[RunRecord]) -> float:
    energies = [run.energy for run in runs if run.certified]
    if not energies:
        raise RuntimeError("No certified N-1 critical point found for the ionization floor")
    return float(min(energies))


def estimate_ionization_floor(molecule: Molecule, basis: BasisSet, config: SurveyConfig,
                              tables: Optional[IntegralTables] = None) -> float:
    """Multistart minimum of E_N-1 (an upper bound on J(N-1)); 0 for N = 1"""
    if molecule.n_electrons == 1:
        return 0.0
    tables = tables if tables is not None else compute_tables(molecule, basis)
    return _floor_from_runs(_floor_runs(molecule, basis, config, tables))


def threshold_census(report: SurveyReport, j_est: float, epsilon: float) -> Tuple[int, int]:
    """(clusters with every e_i < -epsilon, clusters with E < J_est - epsilon)"""
    gamma = sum(1 for c in report.clusters if c.highest_orbital_energy < -epsilon)
    below = sum(1 for c in report.clusters if c.energy < j_est - epsilon)
    return gamma, below


def _summarize(molecule: Molecule, config: SurveyConfig, runs: List[RunRecord], j_est: float) -> SurveyReport:
    report = SurveyReport(molecule.n_electrons, config, runs, cluster_runs(runs, config.cluster_tol), j_est)
    report.gamma_census, report.below_threshold_census = threshold_census(report, j_est, config.epsilon)
    for cluster in report.clusters:
        if cluster.energy < j_est - config.epsilon and not cluster.highest_orbital_energy < -config.epsilon:
            report.contract_violations += 1
        if cluster.energy - cluster.highest_orbital_energy < j_est - KOOPMANS_SLACK:
            report.unexplored_minimum_flags.append(cluster.cluster_id)
    if report.unexplored_minimum_flags:
        logger.warning(f"Clusters {report.unexplored_minimum_flags} imply an unexplored N-1 minimum below "
                       f"J_est={j_est:.10f}")
    return report


def run_survey(molecule: Molecule, basis: BasisSet, config: Optional[SurveyConfig] = None,
               tables: Optional[IntegralTables] = None) -> SurveyReport:
    config = config or SurveyConfig.from_settings()
    tables = tables if tables is not None else compute_tables(molecule, basis)
    runs = collect_runs(molecule, basis, config, tables)
    j_est = estimate_ionization_floor(molecule, basis, config, tables)
    report = _summarize(molecule, config, runs, j_est)
    failed = sum(report.failures.values())
    logger.info(f"Survey of {config.n_starts} starts: {len(report.clusters)} clusters, {failed} failures, "
                f"J_est={j_est:.10f}, gamma={report.gamma_census}, below={report.below_threshold_census}")
    return report


def stability_under_doubling(molecule: Molecule, basis: BasisSet, config: SurveyConfig,
                             epsilons: Optional[Sequence[float]] = None,
                             tables: Optional[IntegralTables] = None) -> DoublingResult:
    """Census over the first n_starts runs against all 2 n_starts runs (shared seed prefix)"""
    epsilons = tuple(epsilons or (config.epsilon,))
    tables = tables if tables is not None else compute_tables(molecule, basis)
    n = config.n_starts
    doubled_config = config.with_starts(2 * n)
    runs = collect_runs(molecule, basis, doubled_config, tables)
    if molecule.n_electrons == 1:
        floor_single = floor_double = 0.0
    else:
        floor_runs = _floor_runs(molecule, basis, doubled_config, tables)
        core = floor_runs[-1:]
        floor_single = _floor_from_runs(floor_runs[:n] + core)
        floor_double = _floor_from_runs(floor_runs)

    def census(subset: List[RunRecord], j_est: float, survey_config: SurveyConfig) -> List[Tuple[int, int, int]]:
        report = _summarize(molecule, survey_config, subset, j_est)
        rows = []
        for epsilon in epsilons:
            gamma, below = threshold_census(report, j_est, epsilon)
            rows.append((gamma, below, len(report.clusters)))
        return rows

    single = census(runs[:n], floor_single, config)
    doubled = census(runs, floor_double, doubled_config)
    result = DoublingResult(n, epsilons, tuple(single), tuple(doubled))
    logger.info(f"Doubling {n} -> {2 * n} starts: stable={result.stable}")
    return result


def write_survey_csv(report: SurveyReport, path: Union[str, Path]):
    path = Path(path)
    N = report.n_electrons
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["seed", "outcome", "E"] + [f"eps_{i + 1}" for i in range(N)] + ["residual", "cluster_id"])
        for run in report.runs:
            eps = [repr(float(x)) for x in run.orbital_energies] or [""] * N
            cluster_id = report.cluster_of(run.index)
            writer.writerow([":".join(str(s) for s in run.seed), run.outcome,
                             "" if run.energy is None else repr(float(run.energy)), *eps,
                             "" if run.residual is None else repr(float(run.residual)),
                             "" if cluster_id is None else cluster_id])
    logger.info(f"Wrote {len(report.runs)} survey rows to {path}")
