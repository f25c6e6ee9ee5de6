from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from scipy import linalg

from core.hf.hfcore import (OrbitalSet, build_fock, density_matrix, exchange_pair_matrix, lagrangian,
                            pair_potential_matrix)
from core.hf.scf import CriticalPoint, random_generator
from core.integrals.integrals import IntegralTables

logger = logging.getLogger(__name__)

PSD_TOL = 1e-10
L_MARGIN_TOL = 1e-8
FD_STEP = 1e-5
FD_TARGET = 1e-6
RANK_TOL = 1e-10
SWEEP_FACTORS = (0.5, 1.0, 1.5)


class CertificationError(RuntimeError):
    """Analysis requested on a critical point that was not certified"""


@dataclass(frozen=True, eq=False)
class PerturbationW:
    """Tangent direction: W (column i = w_i) and multiplier perturbation de"""
    W: np.ndarray
    de: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        de = np.array(self.de, dtype=float).reshape(-1)
        if W.ndim != 2 or W.shape[1] != de.shape[0]:
            raise ValueError(f"W must be n x N with N = len(de): W {W.shape}, de {de.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(de))):
            raise ValueError("Perturbation entries must be finite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "de", de)

    @classmethod
    def random(cls, n: int, N: int, rng: np.random.Generator) -> "PerturbationW":
        return cls(rng.standard_normal((n, N)), rng.standard_normal(N))

    @classmethod
    def zeros(cls, n: int, N: int) -> "PerturbationW":
        return cls(np.zeros((n, N)), np.zeros(N))

    def stacked(self) -> np.ndarray:
        """[w_1; ...; w_N; de]"""
        return np.concatenate([self.W.reshape(-1, order="F"), self.de])


@dataclass(frozen=True)
class RSPositivity:
    min_eigenvalue: float
    fock_two_body_min: float
    per_orbital_min: Tuple[float, ...]
    self_annihilation: float

    @property
    def passed(self) -> bool:
        return self.min_eigenvalue >= -PSD_TOL

    def to_dict(self) -> Dict[str, Any]:
        return {"min_eigenvalue": self.min_eigenvalue, "fock_two_body_min": self.fock_two_body_min,
                "per_orbital_min": list(self.per_orbital_min), "self_annihilation": self.self_annihilation,
                "passed": self.passed}


@dataclass(frozen=True)
class RQIdentity:
    lhs: float
    rhs: float
    pair_integral: float

    @property
    def discrepancy(self) -> float:
        return max(abs(self.lhs - self.rhs), abs(self.lhs - self.pair_integral), abs(self.rhs - self.pair_integral))

    @property
    def passed(self) -> bool:
        return self.discrepancy <= PSD_TOL and min(self.lhs, self.rhs, self.pair_integral) >= -PSD_TOL

    def to_dict(self) -> Dict[str, Any]:
        return {"lhs": self.lhs, "rhs": self.rhs, "pair_integral": self.pair_integral,
                "discrepancy": self.discrepancy, "passed": self.passed}


@dataclass(frozen=True, eq=False)
class SpectralSplit:
    H1: np.ndarray
    H2: np.ndarray
    projector_rank: int
    h_eigenvalues: np.ndarray


@dataclass(frozen=True, eq=False)
class HessianBlocks:
    """Blocks of F' over the stacked coefficient space, plus multiplier couplings"""
    epsilon: float
    orbital_energies: np.ndarray
    metric: np.ndarray
    Hcal: np.ndarray
    Rcal: np.ndarray
    Qcal: np.ndarray
    Scal: np.ndarray
    Sbar: np.ndarray
    SbarT: np.ndarray
    H1: np.ndarray
    H2: np.ndarray
    coupling: np.ndarray
    constraint_rows: np.ndarray
    projector_rank: int

    @property
    def n_orbitals(self) -> int:
        return len(self.orbital_energies)

    @property
    def epsilon_star(self) -> float:
        return float(np.min(-self.orbital_energies))

    @property
    def L_phi(self) -> np.ndarray:
        return self.H1 + self.Rcal - self.Qcal

    @property
    def M_phi(self) -> np.ndarray:
        return self.H2 + self.Scal + self.Sbar - self.SbarT

    @property
    def L(self) -> np.ndarray:
        N = self.n_orbitals
        return np.block([[self.L_phi, np.zeros_like(self.coupling)],
                         [np.zeros_like(self.constraint_rows), np.eye(N)]])

    @property
    def M(self) -> np.ndarray:
        N = self.n_orbitals
        return np.block([[self.M_phi, self.coupling], [self.constraint_rows, -np.eye(N)]])

    @property
    def Fprime(self) -> np.ndarray:
        """F' from the derivative formulas, independent of the H1/H2 split"""
        orbital = self.Hcal + self.Rcal - self.Qcal + self.Scal + self.Sbar - self.SbarT
        N = self.n_orbitals
        return np.block([[orbital, self.coupling], [self.constraint_rows, np.zeros((N, N))]])

    def pairing_weight(self) -> np.ndarray:
        nN = self.Hcal.shape[0]
        return np.concatenate([np.full(nN, 2.0), np.ones(self.n_orbitals)])


@dataclass(frozen=True)
class DerivativeCheck:
    max_relative_error: float
    errors: Tuple[float, ...]
    fallback_used: int

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= FD_TARGET

    def to_dict(self) -> Dict[str, Any]:
        return {"max_relative_error": self.max_relative_error, "n_directions": len(self.errors),
                "fallback_used": self.fallback_used, "passed": self.passed}


@dataclass(frozen=True)
class LMCertificate:
    epsilon: float
    epsilon_star: float
    l_min_eigenvalue: float
    l_margin: float
    target: float
    l_symmetry: float
    h1_min_eigenvalue: float
    split_residual: float
    rq_min_eigenvalue: float
    reassembly_residual: float
    symmetry_residual: float
    projector_rank: int
    ranks: Dict[str, int]
    m_nonzero_eigenvalues: int
    m_constituent_rank_sum: int
    m_decay_profile: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def eps_half(self) -> float:
        return 0.5 * self.epsilon

    @property
    def l_certified(self) -> bool:
        return self.l_margin >= self.target - L_MARGIN_TOL

    @property
    def h2_rank_ok(self) -> bool:
        return self.ranks["H2"] == self.ranks["N"] * self.projector_rank

    @property
    def scal_within_printed_bound(self) -> bool:
        return self.ranks["Scal"] <= 2 * self.ranks["N"] ** 2

    @property
    def sbar_within_printed_bound(self) -> bool:
        return self.ranks["Sbar"] <= self.ranks["N"] ** 2

    @property
    def passed(self) -> bool:
        return self.l_certified and self.h2_rank_ok

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epsilon": self.epsilon, "epsilon_star": self.epsilon_star, "eps_half": self.eps_half,
            "L_min_eig": self.l_min_eigenvalue, "L_margin": self.l_margin, "target": self.target,
            "L_min_eig_ge_target": self.l_certified, "L_symmetry": self.l_symmetry,
            "H1_min_eig": self.h1_min_eigenvalue, "split_residual": self.split_residual,
            "RQ_min_eig": self.rq_min_eigenvalue, "reassembly_residual": self.reassembly_residual,
            "symmetry_residual": self.symmetry_residual, "projector_rank": self.projector_rank,
            "ranks": dict(self.ranks), "H2_rank_ok": self.h2_rank_ok,
            "M_nonzero_eigenvalues": self.m_nonzero_eigenvalues,
            "M_constituent_rank_sum_info": self.m_constituent_rank_sum,
            "Scal_within_printed_bound": self.scal_within_printed_bound,
            "Sbar_within_printed_bound": self.sbar_within_printed_bound,
            "M_decay_profile": list(self.m_decay_profile), "passed": self.passed,
        }


def _orbitals_of(point: Union[CriticalPoint, OrbitalSet]) -> OrbitalSet:
    return point.orbitals if isinstance(point, CriticalPoint) else point


def _require_certified(cp: CriticalPoint):
    if not isinstance(cp, CriticalPoint) or not cp.certified:
        raise CertificationError("Operation needs a certified critical point")


def _block_diagonal(blocks: Sequence[np.ndarray]) -> np.ndarray:
    return linalg.block_diag(*blocks)


def _block_matrix(N: int, n: int, entry) -> np.ndarray:
    """Assemble nN x nN from entry(i, j) -> n x n matrix or None"""
    rows = []
    for i in range(N):
        row = []
        for j in range(N):
            value = entry(i, j)
            row.append(np.zeros((n, n)) if value is None else value)
        rows.append(row)
    return np.block(rows)


def _pair_matrices(C: np.ndarray, tables: IntegralTables):
    N = C.shape[1]
    Q = [[pair_potential_matrix(C[:, i], C[:, j], tables) for j in range(N)] for i in range(N)]
    X = [[exchange_pair_matrix(C[:, i], C[:, j], tables) for j in range(N)] for i in range(N)]
    return Q, X


def _min_eig(matrix: np.ndarray) -> float:
    return float(linalg.eigvalsh(0.5 * (matrix + matrix.T))[0])


def _eri_contract(eri: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray, d: np.ndarray) -> float:
    """(ab|cd) for coefficient vectors"""
    return float(np.einsum("mnls,m,n,l,s->", eri, a, b, c, d, optimize=True))


def antisymmetrized_pair_form(w: np.ndarray, c: np.ndarray, tables: IntegralTables) -> float:
    """1/2 of the Coulomb integral of |w(x) phi(y) - phi(x) w(y)|^2, from eri contractions"""
    eri = tables.eri
    return 0.5 * (_eri_contract(eri, w, w, c, c) + _eri_contract(eri, c, c, w, w)
                  - 2.0 * _eri_contract(eri, w, c, c, w))


def rs_positivity_check(point: Union[CriticalPoint, OrbitalSet], tables: IntegralTables) -> RSPositivity:
    """Smallest eigenvalue of R - S (= Jmat - Kmat) and of every Q_ii - S_ii"""
    orbitals = _orbitals_of(point)
    C = orbitals.C
    fock = build_fock(density_matrix(orbitals), tables)
    global_min = _min_eig(fock.Jmat - fock.Kmat)
    per_orbital = []
    annihilation = 0.0
    for i in range(orbitals.n_orbitals):
        ci = C[:, i]
        difference = pair_potential_matrix(ci, ci, tables) - exchange_pair_matrix(ci, ci, tables)
        per_orbital.append(_min_eig(difference))
        annihilation = max(annihilation, float(np.linalg.norm(difference @ ci)))
    overall = min([global_min] + per_orbital)
    if overall < -PSD_TOL:
        logger.warning(f"R - S positivity violated: min eigenvalue {overall:.3e}")
    return RSPositivity(overall, global_min, tuple(per_orbital), annihilation)


def rq_identity_check(cp: CriticalPoint, perturbation: PerturbationW, tables: IntegralTables) -> RQIdentity:
    """<W, (R - Q) W> by operator matrices, by the [i~j~|kl] sum, and by the pair integrand"""
    _require_certified(cp)
    C = cp.orbitals.C
    W = perturbation.W
    N = C.shape[1]
    if W.shape != C.shape:
        raise ValueError(f"Perturbation shape {W.shape} does not match orbitals {C.shape}")
    Q, _ = _pair_matrices(C, tables)

    lhs = 0.0
    for i in range(N):
        R_i = sum((Q[j][j] for j in range(N) if j != i), np.zeros_like(Q[0][0]))
        lhs += float(W[:, i] @ R_i @ W[:, i])
        for j in range(N):
            if j != i:
                lhs -= float(W[:, i] @ Q[i][j] @ W[:, j])

    # [i~j~|kl] = (w_i w_j | phi_k phi_l)
    mixed = np.einsum("abcd,ai,bj,ck,dl->ijkl", tables.eri, W, W, C, C, optimize=True)
    rhs = sum(mixed[i, i, j, j] - mixed[i, j, j, i] for i in range(N) for j in range(N) if j != i)

    Y = np.hstack([W, C])
    full = np.einsum("abcd,ai,bj,ck,dl->ijkl", tables.eri, Y, Y, Y, Y, optimize=True)
    pair = 0.0
    for i in range(N):
        for j in range(N):
            if j != i:
                pair += 0.5 * (full[i, i, N + j, N + j] + full[j, j, N + i, N + i]
                               - 2.0 * full[i, j, N + j, N + i])
    return RQIdentity(float(lhs), float(rhs), float(pair))


def spectral_split(tables: IntegralTables, epsilon: float, orbital_energies: Sequence[float]) -> SpectralSplit:
    """h = h E(-eps/2) + h (1 - E(-eps/2)) in the S metric, arranged block-diagonally"""
    if not epsilon > 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    h, S = tables.hcore, tables.S
    eigenvalues, U = linalg.eigh(h, S)
    low = eigenvalues <= -0.5 * epsilon
    SU = S @ U[:, low]
    h_low = (SU * eigenvalues[low]) @ SU.T
    h_low = 0.5 * (h_low + h_low.T)
    h_high = h - h_low
    H1 = _block_diagonal([h_high - e_i * S for e_i in orbital_energies])
    H2 = _block_diagonal([h_low for _ in orbital_energies])
    return SpectralSplit(H1, H2, int(np.sum(low)), eigenvalues)


def assemble_hessian(cp: CriticalPoint, tables: IntegralTables, epsilon: Optional[float] = None) -> HessianBlocks:
    _require_certified(cp)
    C, e = cp.orbitals.C, cp.orbitals.e
    n, N = C.shape
    if epsilon is None:
        epsilon = float(np.min(-e))
    h, S = tables.hcore, tables.S
    Q, X = _pair_matrices(C, tables)

    def off_diagonal(source, transpose: bool = False):
        def entry(i, j):
            if i == j:
                return None
            return source[j][i] if transpose else source[i][j]
        return _block_matrix(N, n, entry)

    R_blocks = [sum((Q[j][j] for j in range(N) if j != i), np.zeros((n, n))) for i in range(N)]
    S_blocks = [sum((X[j][j] for j in range(N) if j != i), np.zeros((n, n))) for i in range(N)]
    split = spectral_split(tables, epsilon, e)

    Hcal = _block_diagonal([h - e_i * S for e_i in e])
    Scal = off_diagonal(X) - _block_diagonal(S_blocks)
    coupling = np.zeros((n * N, N))
    constraint_rows = np.zeros((N, n * N))
    for i in range(N):
        Sc = S @ C[:, i]
        coupling[i * n:(i + 1) * n, i] = -Sc
        constraint_rows[i, i * n:(i + 1) * n] = -2.0 * Sc
    H2 = split.H2
    blocks = HessianBlocks(
        epsilon=float(epsilon), orbital_energies=np.array(e), metric=_block_diagonal([S] * N),
        Hcal=Hcal, Rcal=_block_diagonal(R_blocks), Qcal=off_diagonal(Q), Scal=Scal,
        Sbar=off_diagonal(X), SbarT=off_diagonal(X, transpose=True),
        H1=Hcal - H2, H2=H2, coupling=coupling, constraint_rows=constraint_rows,
        projector_rank=split.projector_rank)
    logger.debug(f"Assembled Hessian blocks of size {n * N} (+{N} multipliers), epsilon={epsilon:.6g}")
    return blocks


def stationarity_map(C: np.ndarray, e: np.ndarray, tables: IntegralTables) -> np.ndarray:
    """F(Phi, e) stacked as [(F - e_i S) c_i ; 1 - |phi_i|^2]"""
    point = lagrangian(OrbitalSet(C, e), tables)
    return np.concatenate([point.orbital_gradient.reshape(-1, order="F"), point.constraint_gradient])


def _central_difference(cp: CriticalPoint, tables: IntegralTables, direction: PerturbationW,
                        step: float) -> np.ndarray:
    C, e = cp.orbitals.C, cp.orbitals.e
    forward = stationarity_map(C + step * direction.W, e + step * direction.de, tables)
    backward = stationarity_map(C - step * direction.W, e - step * direction.de, tables)
    return (forward - backward) / (2.0 * step)


def finite_difference_jacobian(cp: CriticalPoint, tables: IntegralTables, step: float = FD_STEP) -> np.ndarray:
    """Column-by-column central-difference Jacobian of the stationarity map"""
    n, N = cp.orbitals.C.shape
    columns = []
    for k in range(n * N + N):
        unit = np.zeros(n * N + N)
        unit[k] = 1.0
        direction = PerturbationW(unit[:n * N].reshape((n, N), order="F"), unit[n * N:])
        columns.append(_central_difference(cp, tables, direction, step))
    return np.stack(columns, axis=1)


def directional_derivative_check(cp: CriticalPoint, tables: IntegralTables,
                                 blocks: Optional[HessianBlocks] = None, n_directions: int = 20,
                                 seed: int = 0) -> DerivativeCheck:
    """Relative error of (L + M)[W, de] against central differences of F"""
    _require_certified(cp)
    blocks = blocks or assemble_hessian(cp, tables)
    operator = blocks.L + blocks.M
    n, N = cp.orbitals.C.shape
    rng = random_generator((seed, 4))
    errors = []
    fallback_used = 0
    for _ in range(n_directions):
        direction = PerturbationW.random(n, N, rng)
        analytic = operator @ direction.stacked()
        scale = max(float(np.linalg.norm(analytic)), 1e-300)
        error = float(np.linalg.norm(_central_difference(cp, tables, direction, FD_STEP) - analytic)) / scale
        if error > FD_TARGET:
            fallback_used += 1
            coarse = _central_difference(cp, tables, direction, 1e-4)
            half = _central_difference(cp, tables, direction, 5e-5)
            richardson = (4.0 * half - coarse) / 3.0
            fine = _central_difference(cp, tables, direction, 1e-6)
            error = min(error,
                        float(np.linalg.norm(richardson - analytic)) / scale,
                        float(np.linalg.norm(fine - analytic)) / scale)
        errors.append(error)
    return DerivativeCheck(max(errors) if errors else 0.0, tuple(errors), fallback_used)


def hessian_symmetry_residual(blocks: HessianBlocks) -> float:
    """max |P F' - (P F')^T| with the pairing weight P = diag(2 I, I)"""
    weighted = blocks.pairing_weight()[:, None] * blocks.Fprime
    return float(np.max(np.abs(weighted - weighted.T)))


def numerical_rank(matrix: np.ndarray, tol: float = RANK_TOL) -> int:
    if matrix.size == 0:
        return 0
    return int(np.linalg.matrix_rank(matrix, tol=tol))


def lm_certificate(blocks: HessianBlocks) -> LMCertificate:
    """Invertibility margin of L and rank accounting for M"""
    N = blocks.n_orbitals
    metric = blocks.metric
    L_phi = blocks.L_phi
    l_symmetry = float(np.max(np.abs(L_phi - L_phi.T)))
    l_min = float(linalg.eigh(0.5 * (L_phi + L_phi.T), metric, eigvals_only=True)[0])
    h1_min = float(linalg.eigh(0.5 * (blocks.H1 + blocks.H1.T), metric, eigvals_only=True)[0])
    epsilon_star = blocks.epsilon_star
    target = min(epsilon_star - 0.5 * blocks.epsilon, 1.0)

    ranks = {
        "N": N,
        "H2": numerical_rank(blocks.H2),
        "Scal": numerical_rank(blocks.Scal),
        "Sbar": numerical_rank(blocks.Sbar),
        "SbarT": numerical_rank(blocks.SbarT),
        "coupling": numerical_rank(blocks.coupling),
        "constraint_rows": numerical_rank(blocks.constraint_rows),
        "M": numerical_rank(blocks.M),
    }
    pieces = ("H2", "Scal", "Sbar", "SbarT", "coupling", "constraint_rows")
    rank_sum = sum(ranks[name] for name in pieces)
    threshold = RANK_TOL * (len(pieces) + 1)
    m_eigenvalues = np.linalg.eigvals(blocks.M)
    nonzero = int(np.sum(np.abs(m_eigenvalues) > threshold))
    decay = np.sort(np.abs(linalg.eigvalsh(0.5 * (blocks.M_phi + blocks.M_phi.T))))[::-1]

    certificate = LMCertificate(
        epsilon=blocks.epsilon, epsilon_star=epsilon_star, l_min_eigenvalue=l_min,
        l_margin=min(l_min, 1.0), target=target, l_symmetry=l_symmetry, h1_min_eigenvalue=h1_min,
        split_residual=float(np.max(np.abs(blocks.Hcal - blocks.H1 - blocks.H2))),
        rq_min_eigenvalue=_min_eig(blocks.Rcal - blocks.Qcal),
        reassembly_residual=float(np.max(np.abs(blocks.L + blocks.M - blocks.Fprime))),
        symmetry_residual=hessian_symmetry_residual(blocks), projector_rank=blocks.projector_rank,
        ranks=ranks, m_nonzero_eigenvalues=nonzero, m_constituent_rank_sum=rank_sum,
        m_decay_profile=tuple(float(x) for x in decay))
    if not certificate.l_certified:
        logger.warning(f"L margin {certificate.l_margin:.6g} below target {target:.6g}")
    if not certificate.scal_within_printed_bound:
        logger.debug(f"rank(Scal)={ranks['Scal']} exceeds 2N^2 in this finite basis")
    return certificate


def epsilon_sweep(cp: CriticalPoint, tables: IntegralTables,
                  factors: Sequence[float] = SWEEP_FACTORS) -> List[LMCertificate]:
    """Certificates for epsilon = factor * min(-e_i)"""
    _require_certified(cp)
    epsilon_star = float(np.min(-cp.orbitals.e))
    if not epsilon_star > 0.0:
        raise ValueError(f"All orbital energies must be negative for the split, min(-e_i) = {epsilon_star}")
    return [lm_certificate(assemble_hessian(cp, tables, factor * epsilon_star)) for factor in factors]
