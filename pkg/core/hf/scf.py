from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
import csv
import logging

import numpy as np
from scipy import linalg

from config.settings import settings_manager
from core.hf.hfcore import (FockMatrices, OrbitalSet, bivariate_energy, build_fock, canonicalize,
                            density_matrix, fix_signs, hf_energy, orthonormalize)
from core.integrals.integrals import IntegralTables, compute_tables
from core.molecule.molbasis import BasisSet, Molecule

logger = logging.getLogger(__name__)

SINGULAR_OVERLAP = 1e12
CONSTRAINT_TOL = 1e-10

Seed = Union[int, Sequence[int]]


class ScfOutcome(Enum):
    CONVERGED = "converged"
    OSCILLATING = "oscillating"
    MAX_ITER = "max_iter"

    @property
    def exit_code(self) -> int:
        return {"converged": 0, "oscillating": 2, "max_iter": 3}[self.value]


class GuessKind(Enum):
    CORE = "core"
    RANDOM = "random"


@dataclass(frozen=True)
class ScfOptions:
    max_iter: int = 500
    tol_energy: float = 1e-10
    tol_commutator: float = 1e-8
    damping: float = 0.0
    degeneracy_tol: float = 1e-9
    oscillation_window: int = 10
    oscillation_tol: float = 1e-8

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        for name in ("tol_energy", "tol_commutator", "degeneracy_tol", "oscillation_tol"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError(f"damping must lie in [0, 1), got {self.damping}")
        if self.oscillation_window < 1:
            raise ValueError(f"oscillation_window must be at least 1, got {self.oscillation_window}")

    @classmethod
    def from_settings(cls, overrides: Optional[Dict[str, Any]] = None) -> "ScfOptions":
        """Configured defaults with non-None overrides applied"""
        values = asdict(settings_manager.settings.scf)
        known = {f.name for f in fields(cls)}
        for key, value in (overrides or {}).items():
            if key not in known:
                raise ValueError(f"Unknown SCF option: {key}")
            if value is not None:
                values[key] = type(values[key])(value)
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    energy: float
    bivariate_energy: float
    commutator_norm: float
    orbital_energies: Tuple[float, ...]
    degenerate: bool = False


@dataclass
class ScfTrace:
    initial_energy: float
    records: List[IterationRecord] = field(default_factory=list)
    outcome: Optional[ScfOutcome] = None

    def bivariate_sequence(self) -> np.ndarray:
        return np.array([r.bivariate_energy for r in self.records])

    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.records])

    def descent_violations(self, tol: float = 1e-12) -> int:
        """Steps where E(Phi^j, Phi^j+1) increased by more than tol"""
        sequence = self.bivariate_sequence()
        return int(np.sum(np.diff(sequence) > tol))

    def upper_bound_violations(self, tol: float = 1e-12) -> int:
        """Steps where E(Phi^j, Phi^j+1) exceeds E(Phi^j, Phi^j) = 2 E(Phi^j)"""
        return int(np.sum(self.bivariate_sequence() > 2.0 * self.energies() + tol))

    def to_rows(self) -> List[List[Any]]:
        return [[r.iteration, r.energy, r.bivariate_energy, r.commutator_norm, *r.orbital_energies,
                 int(r.degenerate)] for r in self.records]


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    orbitals: OrbitalSet
    energy: float
    residual: float
    constraint_error: float
    certified: bool
    degenerate: bool = False
    iterations: int = 0
    initial_energy: Optional[float] = None

    @property
    def descent_audit(self) -> Optional[bool]:
        """E(Phi^inf) <= E(Phi^0), the consequence of the bivariate descent"""
        if self.initial_energy is None:
            return None
        return self.energy <= self.initial_energy + 1e-10

    def to_dict(self) -> Dict[str, Any]:
        return {
            "energy": self.energy,
            "orbital_energies": self.orbitals.e.tolist(),
            "residual": self.residual,
            "constraint_error": self.constraint_error,
            "certified": self.certified,
            "degenerate": self.degenerate,
            "iterations": self.iterations,
            "initial_energy": self.initial_energy,
            "descent_audit": self.descent_audit,
        }


@dataclass(frozen=True, eq=False)
class ScfResult:
    outcome: ScfOutcome
    trace: ScfTrace
    critical_point: Optional[CriticalPoint] = None
    last_orbitals: Optional[OrbitalSet] = None

    @property
    def converged(self) -> bool:
        return self.outcome == ScfOutcome.CONVERGED

    @property
    def exit_code(self) -> int:
        return self.outcome.exit_code


@dataclass(frozen=True, eq=False)
class RoothaanStep:
    orbitals: OrbitalSet
    fock: FockMatrices
    next_density: np.ndarray
    degenerate: bool


@dataclass(frozen=True)
class KoopmansResult:
    residual: float
    ionization_potential: float
    highest_orbital_energy: float
    reduced_energy: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def random_generator(seed: Seed) -> np.random.Generator:
    """Counter-based generator keyed by an integer or an integer tuple"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def orthonormalizer(S: np.ndarray) -> np.ndarray:
    """S^(-1/2); raises RuntimeError for a singular overlap"""
    w, V = linalg.eigh(S)
    if w[0] <= 0.0 or w[-1] / w[0] > SINGULAR_OVERLAP:
        raise RuntimeError(f"singular overlap matrix (eigenvalues {w[0]:.3e} .. {w[-1]:.3e})")
    return (V * w ** -0.5) @ V.T


def commutator_norm(F: np.ndarray, D: np.ndarray, S: np.ndarray) -> float:
    """Frobenius norm of F D S - S D F"""
    FDS = F @ D @ S
    return float(np.linalg.norm(FDS - FDS.T))


def initial_guess(tables: IntegralTables, n_electrons: int, kind: Union[GuessKind, str] = GuessKind.CORE,
                  seed: Seed = 0) -> OrbitalSet:
    kind = GuessKind(kind)
    n = tables.n_functions
    if n < n_electrons:
        raise ValueError(f"Basis has {n} functions but {n_electrons} orbitals are needed")
    orthonormalizer(tables.S)
    if kind == GuessKind.CORE:
        w, V = linalg.eigh(tables.hcore, tables.S)
        return OrbitalSet(fix_signs(V[:, :n_electrons]), w[:n_electrons])
    start = random_generator(seed).standard_normal((n, n_electrons))
    return OrbitalSet(orthonormalize(start, tables.S), np.zeros(n_electrons))


def _aufbau(F: np.ndarray, X: np.ndarray, n_electrons: int, degeneracy_tol: float) -> Tuple[OrbitalSet, bool]:
    """N lowest eigenpairs of F c = e S c, solved in the X = S^(-1/2) basis"""
    try:
        w, V = linalg.eigh(X @ F @ X)
    except linalg.LinAlgError as e:
        raise RuntimeError(f"Eigensolver failure in Roothaan step: {e}") from e
    vectors = fix_signs(X @ V)
    n = len(w)
    N = n_electrons
    degenerate = N < n and w[N] - w[N - 1] < degeneracy_tol
    if not degenerate:
        return OrbitalSet(vectors[:, :N], w[:N]), False

    lo = N - 1
    while lo > 0 and w[N - 1] - w[lo - 1] < degeneracy_tol:
        lo -= 1
    hi = N
    while hi + 1 < n and w[hi + 1] - w[N - 1] < degeneracy_tol:
        hi += 1
    members = list(range(lo, hi + 1))
    members.sort(key=lambda k: (w[k], tuple(np.round(vectors[:, k], 12))))
    chosen = sorted(members[:N - lo], key=lambda k: w[k])
    selection = list(range(lo)) + chosen
    return OrbitalSet(vectors[:, selection], w[selection]), True


def roothaan_step(orbitals: OrbitalSet, tables: IntegralTables, options: Optional[ScfOptions] = None,
                  fock_density: Optional[np.ndarray] = None, X: Optional[np.ndarray] = None) -> RoothaanStep:
    """One Aufbau step Phi^j -> Phi^j+1 on F(D); D defaults to the density of the orbitals"""
    options = options or ScfOptions.from_settings()
    D = density_matrix(orbitals) if fock_density is None else fock_density
    X = orthonormalizer(tables.S) if X is None else X
    fock = build_fock(D, tables)
    new_orbitals, degenerate = _aufbau(fock.F, X, orbitals.n_orbitals, options.degeneracy_tol)
    D_new = density_matrix(new_orbitals)
    if options.damping > 0.0:
        next_density = (1.0 - options.damping) * D_new + options.damping * D
    else:
        next_density = D_new
    return RoothaanStep(new_orbitals, fock, next_density, degenerate)


def certify(orbitals: OrbitalSet, tables: IntegralTables, options: Optional[ScfOptions] = None,
            degenerate: bool = False, iterations: int = 0,
            initial_energy: Optional[float] = None) -> CriticalPoint:
    """Rebuild F from scratch, canonicalize, and measure max_i |(F - e_i S) c_i|"""
    options = options or ScfOptions.from_settings()
    fock = build_fock(density_matrix(orbitals), tables)
    canonical = canonicalize(orbitals, tables, fock)
    C, e = canonical.C, canonical.e
    residual_vectors = fock.F @ C - (tables.S @ C) * e[None, :]
    residual = float(np.max(np.linalg.norm(residual_vectors, axis=0)))
    constraint_error = canonical.constraint_error(tables.S)
    certified = residual <= options.tol_commutator and constraint_error <= CONSTRAINT_TOL
    return CriticalPoint(canonical, hf_energy(canonical, tables), residual, constraint_error, certified,
                         degenerate, iterations, initial_energy)


def scf_solve(molecule: Molecule, basis: BasisSet, options: Optional[ScfOptions] = None,
              guess: Union[GuessKind, str] = GuessKind.CORE, seed: Seed = 0,
              tables: Optional[IntegralTables] = None) -> ScfResult:
    """Plain Roothaan iteration (optionally damped) until convergence, oscillation or max_iter"""
    options = options or ScfOptions.from_settings()
    tables = tables if tables is not None else compute_tables(molecule, basis)
    N = molecule.n_electrons
    S = tables.S
    X = orthonormalizer(S)

    orbitals = initial_guess(tables, N, guess, seed)
    energy = hf_energy(orbitals, tables)
    trace = ScfTrace(initial_energy=energy)
    fock_density = density_matrix(orbitals)
    previous_density: Optional[np.ndarray] = None
    periodic = 0

    for iteration in range(1, options.max_iter + 1):
        density = density_matrix(orbitals)
        step = roothaan_step(orbitals, tables, options, fock_density, X)
        commutator = commutator_norm(step.fock.F, fock_density, S)
        trace.records.append(IterationRecord(
            iteration, energy, bivariate_energy(orbitals, step.orbitals, tables), commutator,
            tuple(float(x) for x in step.orbitals.e), step.degenerate))
        next_energy = hf_energy(step.orbitals, tables)
        next_density = density_matrix(step.orbitals)
        logger.debug(f"SCF iteration {iteration}: E={next_energy:.12f} dE={next_energy - energy:.3e} "
                     f"commutator={commutator:.3e}")

        if abs(next_energy - energy) <= options.tol_energy and commutator <= options.tol_commutator:
            candidate = certify(step.orbitals, tables, options, step.degenerate, iteration, trace.initial_energy)
            if candidate.certified:
                trace.outcome = ScfOutcome.CONVERGED
                if candidate.degenerate:
                    logger.warning(f"Converged with a degenerate Aufbau level at N={N}; selection is deterministic")
                logger.info(f"SCF converged in {iteration} iterations: E={candidate.energy:.12f}")
                return ScfResult(ScfOutcome.CONVERGED, trace, candidate, candidate.orbitals)
            logger.debug(f"Residual {candidate.residual:.3e} above tolerance, continuing")

        if previous_density is not None:
            returned = np.linalg.norm(next_density - previous_density) < options.oscillation_tol
            moved = np.linalg.norm(next_density - density) > options.oscillation_tol
            periodic = periodic + 1 if returned and moved else 0
            if periodic >= options.oscillation_window:
                trace.outcome = ScfOutcome.OSCILLATING
                logger.warning(f"SCF oscillates between two states after {iteration} iterations")
                return ScfResult(ScfOutcome.OSCILLATING, trace, None, step.orbitals)

        previous_density = density
        orbitals = step.orbitals
        energy = next_energy
        fock_density = step.next_density

    trace.outcome = ScfOutcome.MAX_ITER
    logger.warning(f"SCF did not converge in {options.max_iter} iterations")
    return ScfResult(ScfOutcome.MAX_ITER, trace, None, orbitals)


def koopmans_check(cp: CriticalPoint, tables: IntegralTables) -> KoopmansResult:
    """|E_N(Phi) - E_N-1(Phi^) - e_N| with Phi^ the N-1 lowest frozen canonical orbitals"""
    if not cp.certified:
        raise ValueError("Koopmans check needs a certified critical point")
    orbitals = cp.orbitals
    N = orbitals.n_orbitals
    highest = float(orbitals.e[-1])
    if N == 1:
        reduced = 0.0
    else:
        reduced = hf_energy(OrbitalSet(orbitals.C[:, :N - 1], orbitals.e[:N - 1]), tables)
    residual = abs(cp.energy - reduced - highest)
    return KoopmansResult(residual, reduced - cp.energy, highest, reduced)


def orbital_energy_bound_check(cp: CriticalPoint, tables: IntegralTables) -> float:
    """min_i e_i - lambda_min(h) in the S metric; non-negative up to rounding"""
    lowest = linalg.eigh(tables.hcore, tables.S, eigvals_only=True)[0]
    return float(np.min(cp.orbitals.e) - lowest)


def write_trace_csv(trace: ScfTrace, path: Union[str, Path]):
    path = Path(path)
    n_orbitals = len(trace.records[0].orbital_energies) if trace.records else 0
    header = ["iter", "E", "E_bivariate", "commutator_norm"] + [f"eps_{i + 1}" for i in range(n_orbitals)]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header + ["degenerate"])
        for row in trace.to_rows():
            writer.writerow([repr(float(x)) if isinstance(x, float) else x for x in row])
    logger.info(f"Wrote SCF trace with {len(trace.records)} rows to {path}")
