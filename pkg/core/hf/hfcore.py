from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple
import logging

import numpy as np
from scipy import linalg

from core.integrals.integrals import IntegralTables

logger = logging.getLogger(__name__)

# (W, de): orbital block n x N and multiplier block N
Perturbation = Tuple[np.ndarray, np.ndarray]


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


@dataclass(frozen=True, eq=False)
class OrbitalSet:
    """Orbital coefficients (column i = phi_i) and orbital energies"""
    C: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        C = np.array(self.C, dtype=float)
        if C.ndim == 1:
            C = C[:, None]
        e = np.array(self.e, dtype=float).reshape(-1)
        if C.ndim != 2 or e.shape[0] != C.shape[1]:
            raise ValueError(f"Need one orbital energy per column: C {C.shape}, e {e.shape}")
        object.__setattr__(self, "C", _readonly(C))
        object.__setattr__(self, "e", _readonly(e))

    @classmethod
    def from_coefficients(cls, C: np.ndarray) -> "OrbitalSet":
        C = np.asarray(C, dtype=float)
        if C.ndim == 1:
            C = C[:, None]
        return cls(C, np.zeros(C.shape[1]))

    @property
    def n_basis(self) -> int:
        return self.C.shape[0]

    @property
    def n_orbitals(self) -> int:
        return self.C.shape[1]

    def density(self) -> np.ndarray:
        return density_matrix(self)

    def constraint_error(self, S: np.ndarray) -> float:
        """max |C^T S C - I|"""
        return float(np.max(np.abs(self.C.T @ S @ self.C - np.eye(self.n_orbitals))))

    def with_energies(self, e) -> "OrbitalSet":
        return OrbitalSet(self.C, e)

    def to_dict(self) -> Dict[str, Any]:
        """Convert orbitals to dictionary for serialization"""
        return {"coefficients": self.C.tolist(), "orbital_energies": self.e.tolist()}


@dataclass(frozen=True, eq=False)
class FockMatrices:
    Jmat: np.ndarray
    Kmat: np.ndarray
    F: np.ndarray


@dataclass(frozen=True, eq=False)
class EnergyComponents:
    one_electron: float
    coulomb: float
    exchange: float

    @property
    def total(self) -> float:
        return self.one_electron + self.coulomb + self.exchange

    def to_dict(self) -> Dict[str, float]:
        return {"one_electron": self.one_electron, "coulomb": self.coulomb,
                "exchange": self.exchange, "total": self.total}


@dataclass(frozen=True, eq=False)
class LagrangianPoint:
    """f(Phi, e) and its image F(Phi, e) in the dual representation"""
    orbitals: OrbitalSet
    value: float
    orbital_gradient: np.ndarray
    constraint_gradient: np.ndarray

    @property
    def gradient(self) -> Perturbation:
        return self.orbital_gradient, self.constraint_gradient

    @property
    def gradient_norm(self) -> float:
        """Largest block norm of the gradient"""
        orbital = float(np.max(np.linalg.norm(self.orbital_gradient, axis=0)))
        return max(orbital, float(np.max(np.abs(self.constraint_gradient))))


def density_matrix(orbitals: OrbitalSet) -> np.ndarray:
    """D = C C^T"""
    C = orbitals.C
    return _symmetrize(C @ C.T)


def coulomb_matrix(D: np.ndarray, eri: np.ndarray) -> np.ndarray:
    """J_{mu nu} = sum D_{lambda sigma} (mu nu|lambda sigma)"""
    return _symmetrize(np.tensordot(eri, D, axes=([2, 3], [0, 1])))


def exchange_matrix(D: np.ndarray, eri: np.ndarray) -> np.ndarray:
    """K_{mu nu} = sum D_{lambda sigma} (mu lambda|sigma nu)"""
    return _symmetrize(np.tensordot(eri, D, axes=([1, 2], [0, 1])))


def build_fock(D: np.ndarray, tables: IntegralTables) -> FockMatrices:
    D = np.asarray(D, dtype=float)
    if np.max(np.abs(D - D.T), initial=0.0) > 1e-10 * max(1.0, float(np.max(np.abs(D), initial=0.0))):
        raise ValueError("Density matrix must be symmetric")
    Jmat = coulomb_matrix(D, tables.eri)
    Kmat = exchange_matrix(D, tables.eri)
    F = _symmetrize(tables.hcore + Jmat - Kmat)
    return FockMatrices(Jmat, Kmat, F)


def _one_electron_energy(C: np.ndarray, h: np.ndarray) -> float:
    return float(np.einsum("mi,mi->", C, h @ C))


def energy_components(orbitals: OrbitalSet, tables: IntegralTables) -> EnergyComponents:
    """One-electron, Coulomb and exchange parts of E(Phi)"""
    D = density_matrix(orbitals)
    fock = build_fock(D, tables)
    return EnergyComponents(
        one_electron=_one_electron_energy(orbitals.C, tables.hcore),
        coulomb=0.5 * float(np.sum(D * fock.Jmat)),
        exchange=-0.5 * float(np.sum(D * fock.Kmat)),
    )


def hf_energy(orbitals: OrbitalSet, tables: IntegralTables) -> float:
    """E(Phi) = sum <phi_i, h phi_i> + 1/2 tr(D (J - K))"""
    D = density_matrix(orbitals)
    fock = build_fock(D, tables)
    return _one_electron_energy(orbitals.C, tables.hcore) + 0.5 * float(np.sum(D * (fock.Jmat - fock.Kmat)))


def coulomb_exchange_pairs(orbitals: OrbitalSet, tables: IntegralTables) -> Tuple[np.ndarray, np.ndarray]:
    """J_ij = (ii|jj) and K_ij = (ij|ji) over the orbitals"""
    C = orbitals.C
    half = np.einsum("mnls,mi,nj->ijls", tables.eri, C, C, optimize=True)
    mo = np.einsum("ijls,lk,sm->ijkm", half, C, C, optimize=True)
    J = np.einsum("iijj->ij", mo)
    K = np.einsum("ijji->ij", mo)
    return _symmetrize(J), _symmetrize(K)


def pair_potential_matrix(ci: np.ndarray, cj: np.ndarray, tables: IntegralTables) -> np.ndarray:
    """Matrix of Q_ij: multiplication by the potential of the pair density phi_i phi_j"""
    return np.tensordot(tables.eri, np.outer(cj, ci), axes=([2, 3], [0, 1]))


def exchange_pair_matrix(ci: np.ndarray, cj: np.ndarray, tables: IntegralTables) -> np.ndarray:
    """Matrix of S_ij: w -> phi_i times the potential of phi_j w"""
    return np.tensordot(tables.eri, np.outer(ci, cj), axes=([1, 2], [0, 1]))


def lagrangian(orbitals: OrbitalSet, tables: IntegralTables) -> LagrangianPoint:
    """f(Phi, e) = E(Phi) - sum e_i (|phi_i|^2 - 1) with gradient blocks (F - e_i S) c_i"""
    C, e = orbitals.C, orbitals.e
    S = tables.S
    D = density_matrix(orbitals)
    fock = build_fock(D, tables)
    norms = np.einsum("mi,mi->i", C, S @ C)
    energy = _one_electron_energy(C, tables.hcore) + 0.5 * float(np.sum(D * (fock.Jmat - fock.Kmat)))
    value = energy - float(np.dot(e, norms - 1.0))
    orbital_gradient = fock.F @ C - (S @ C) * e[None, :]
    return LagrangianPoint(orbitals, value, orbital_gradient, 1.0 - norms)


def pairing(first: Perturbation, second: Perturbation) -> float:
    """<<[W1, e1], [W2, e2]>> = sum 2 <w1_i, w2_i> + sum e1_i e2_i"""
    W1, e1 = first
    W2, e2 = second
    return 2.0 * float(np.sum(np.asarray(W1) * np.asarray(W2))) + float(np.dot(e1, e2))


def bivariate_energy(first: OrbitalSet, second: OrbitalSet, tables: IntegralTables) -> float:
    """E(Phi, Phi~) = sum <phi_i, h phi_i> + sum <phi~_i, F(Phi) phi~_i>"""
    h = tables.hcore
    D1 = density_matrix(first)
    D2 = density_matrix(second)
    two_body = coulomb_matrix(D1, tables.eri) - exchange_matrix(D1, tables.eri)
    return (_one_electron_energy(first.C, h) + _one_electron_energy(second.C, h)
            + float(np.sum(D2 * two_body)))


def orthonormalize(C: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Symmetric (Lowdin) orthonormalization of the columns of C in the S metric"""
    C = np.asarray(C, dtype=float)
    metric = _symmetrize(C.T @ S @ C)
    w, V = linalg.eigh(metric)
    if w[0] <= 1e-12 * max(1.0, w[-1]):
        raise ValueError("Columns are linearly dependent in the overlap metric")
    return C @ (V * w ** -0.5) @ V.T


def fix_signs(C: np.ndarray) -> np.ndarray:
    """Flip columns so their largest-magnitude entry is positive"""
    C = np.array(C, dtype=float)
    for i in range(C.shape[1]):
        k = int(np.argmax(np.abs(C[:, i])))
        if C[k, i] < 0.0:
            C[:, i] = -C[:, i]
    return C


def canonicalize(orbitals: OrbitalSet, tables: IntegralTables,
                 fock: Optional[FockMatrices] = None) -> OrbitalSet:
    """Rotate within the occupied span so that C^T F C is diagonal with ascending entries"""
    if fock is None:
        fock = build_fock(density_matrix(orbitals), tables)
    C = orbitals.C
    eps, U = linalg.eigh(_symmetrize(C.T @ fock.F @ C))
    return OrbitalSet(fix_signs(C @ U), eps)
