from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, Tuple, Union
import logging
import math
import struct

import numpy as np

from core.integrals.boys import boys_table
from core.molecule.molbasis import BasisSet, Molecule

logger = logging.getLogger(__name__)

DUMP_MAGIC = b"HFLB"
DUMP_VERSION = 1
_HEADER = struct.Struct("<4sIII8s")

ILL_CONDITIONED = 1e8

# Hermite indices (t, u, v), each <= 2 for a product of two l <= 1 functions
_TUV = [(t, u, v) for t in range(3) for u in range(3) for v in range(3)]
_T_IDX = np.array([[t1 + t2 for (t2, _, _) in _TUV] for (t1, _, _) in _TUV])
_U_IDX = np.array([[u1 + u2 for (_, u2, _) in _TUV] for (_, u1, _) in _TUV])
_V_IDX = np.array([[v1 + v2 for (_, _, v2) in _TUV] for (_, _, v1) in _TUV])
_KET_SIGN = np.array([[(-1.0) ** (t2 + u2 + v2) for (t2, u2, v2) in _TUV] for _ in _TUV])


def hermite_expansion(i: int, j: int, t: int, x_ab, a, b):
    """McMurchie-Davidson coefficient E^{ij}_t of a 1D Gaussian product.

    x_ab is A - B along one axis; a and b are the exponents (broadcastable arrays).
    """
    p = a + b
    q = a * b / p
    if t < 0 or t > i + j:
        return np.zeros(np.broadcast(x_ab, a, b).shape)
    if i == j == t == 0:
        return np.exp(-q * x_ab * x_ab)
    if j == 0:
        return (hermite_expansion(i - 1, j, t - 1, x_ab, a, b) / (2.0 * p)
                - (q * x_ab / a) * hermite_expansion(i - 1, j, t, x_ab, a, b)
                + (t + 1) * hermite_expansion(i - 1, j, t + 1, x_ab, a, b))
    return (hermite_expansion(i, j - 1, t - 1, x_ab, a, b) / (2.0 * p)
            + (q * x_ab / b) * hermite_expansion(i, j - 1, t, x_ab, a, b)
            + (t + 1) * hermite_expansion(i, j - 1, t + 1, x_ab, a, b))


def hermite_coulomb(L: int, alpha, pc) -> np.ndarray:
    """Hermite Coulomb integrals R_{tuv}(alpha, PC) for t + u + v <= L.

    Returns shape alpha.shape + (L+1, L+1, L+1); entries with t + u + v > L are zero.
    """
    alpha = np.asarray(alpha, dtype=float)
    pc = np.asarray(pc, dtype=float)
    x, y, z = pc[..., 0], pc[..., 1], pc[..., 2]
    boys_values = boys_table(L, alpha * (x * x + y * y + z * z))
    R = np.zeros((L + 1, L + 1, L + 1, L + 1) + alpha.shape)
    for n in range(L + 1):
        R[n, 0, 0, 0] = (-2.0 * alpha) ** n * boys_values[n]
    for total in range(1, L + 1):
        for n in range(L - total + 1):
            for t in range(total + 1):
                for u in range(total - t + 1):
                    v = total - t - u
                    if t > 0:
                        value = x * R[n + 1, t - 1, u, v]
                        if t > 1:
                            value = value + (t - 1) * R[n + 1, t - 2, u, v]
                    elif u > 0:
                        value = y * R[n + 1, t, u - 1, v]
                        if u > 1:
                            value = value + (u - 1) * R[n + 1, t, u - 2, v]
                    else:
                        value = z * R[n + 1, t, u, v - 1]
                        if v > 1:
                            value = value + (v - 1) * R[n + 1, t, u, v - 2]
                    R[n, t, u, v] = value
    return np.moveaxis(R[0], (0, 1, 2), (-3, -2, -1))


@dataclass(frozen=True, eq=False)
class IntegralTables:
    """Overlap, -Laplacian kinetic, nuclear attraction and (mu nu|lambda sigma) tables"""
    S: np.ndarray
    T: np.ndarray
    Vnuc: np.ndarray
    eri: np.ndarray
    convention: str = "paper"
    l_max: int = 0
    basis_name: str = ""

    def __post_init__(self):
        for name in ("S", "T", "Vnuc", "eri"):
            array = np.array(getattr(self, name), dtype=float)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        n = self.S.shape[0]
        if self.S.shape != (n, n) or self.T.shape != (n, n) or self.Vnuc.shape != (n, n):
            raise ValueError("One-electron tables must be square and of equal size")
        if self.eri.shape != (n, n, n, n):
            raise ValueError(f"eri tensor must have shape {(n, n, n, n)}, got {self.eri.shape}")

    @property
    def n_functions(self) -> int:
        return self.S.shape[0]

    @cached_property
    def hcore(self) -> np.ndarray:
        h = self.T + self.Vnuc
        h.setflags(write=False)
        return h


@dataclass(frozen=True)
class OverlapCondition:
    lambda_min: float
    lambda_max: float
    condition: float

    def to_dict(self) -> Dict[str, float]:
        return {"lambda_min": self.lambda_min, "lambda_max": self.lambda_max, "condition": self.condition}


@dataclass
class _ShellPair:
    p: np.ndarray          # (K,) combined exponents
    center: np.ndarray     # (K, 3) product centers
    hermite: np.ndarray    # (ncart_a, ncart_b, K, 27) coefficient-weighted E_tuv
    l_total: int


class IntegralEngine:
    """McMurchie-Davidson evaluation of all integral classes for one (molecule, basis)"""

    def __init__(self, molecule: Molecule, basis: BasisSet):
        n_atoms = len(molecule.atoms)
        for shell in basis.shells:
            if not 0 <= shell.center < n_atoms:
                raise ValueError(f"Shell center {shell.center} outside molecule with {n_atoms} atoms")
        self._molecule = molecule
        self._basis = basis
        self._shells = basis.shells
        self._centers = molecule.positions[[shell.center for shell in basis.shells]] \
            if basis.shells else np.zeros((0, 3))
        self._offsets = basis.function_offsets()
        self._n = basis.n_functions
        self._pairs: Dict[Tuple[int, int], _ShellPair] = {}

    def _slice(self, index: int) -> slice:
        start = self._offsets[index]
        return slice(start, start + self._shells[index].n_cartesian)

    def _primitive_grid(self, i: int, j: int):
        shell_a, shell_b = self._shells[i], self._shells[j]
        ea, eb = np.asarray(shell_a.exponents), np.asarray(shell_b.exponents)
        ca, cb = np.asarray(shell_a.coefficients), np.asarray(shell_b.coefficients)
        a = np.repeat(ea, len(eb))
        b = np.tile(eb, len(ea))
        coefficients = np.repeat(ca, len(cb)) * np.tile(cb, len(ca))
        return a, b, coefficients

    def _pair(self, i: int, j: int) -> _ShellPair:
        key = (i, j)
        if key in self._pairs:
            return self._pairs[key]
        shell_a, shell_b = self._shells[i], self._shells[j]
        A, B = self._centers[i], self._centers[j]
        a, b, coefficients = self._primitive_grid(i, j)
        p = a + b
        center = (a[:, None] * A + b[:, None] * B) / p[:, None]
        ab = A - B
        K = len(p)
        hermite = np.zeros((shell_a.n_cartesian, shell_b.n_cartesian, K, 3, 3, 3))
        for ia, pa in enumerate(shell_a.cartesian_powers):
            for ib, pb in enumerate(shell_b.cartesian_powers):
                axes = []
                for d in range(3):
                    e = np.zeros((3, K))
                    for t in range(pa[d] + pb[d] + 1):
                        e[t] = hermite_expansion(pa[d], pb[d], t, ab[d], a, b)
                    axes.append(e)
                hermite[ia, ib] = np.einsum("tk,uk,vk->ktuv", *axes) * coefficients[:, None, None, None]
        pair = _ShellPair(p, center, hermite.reshape(shell_a.n_cartesian, shell_b.n_cartesian, K, 27),
                          shell_a.angular_momentum + shell_b.angular_momentum)
        self._pairs[key] = pair
        return pair

    def _one_electron(self, block: Callable[[int, int], np.ndarray]) -> np.ndarray:
        matrix = np.zeros((self._n, self._n))
        for i in range(len(self._shells)):
            for j in range(i + 1):
                values = block(i, j)
                matrix[self._slice(i), self._slice(j)] = values
                matrix[self._slice(j), self._slice(i)] = values.T
        return 0.5 * (matrix + matrix.T)

    def _overlap_block(self, i: int, j: int) -> np.ndarray:
        pair = self._pair(i, j)
        return np.einsum("abk,k->ab", pair.hermite[..., 0], (math.pi / pair.p) ** 1.5)

    def _kinetic_block(self, i: int, j: int) -> np.ndarray:
        shell_a, shell_b = self._shells[i], self._shells[j]
        ab = self._centers[i] - self._centers[j]
        a, b, coefficients = self._primitive_grid(i, j)
        root = np.sqrt(math.pi / (a + b))

        def overlap_1d(i1: int, j1: int, d: int) -> np.ndarray:
            return hermite_expansion(i1, j1, 0, ab[d], a, b) * root

        block = np.zeros((shell_a.n_cartesian, shell_b.n_cartesian))
        for ia, pa in enumerate(shell_a.cartesian_powers):
            for ib, pb in enumerate(shell_b.cartesian_powers):
                plain = [overlap_1d(pa[d], pb[d], d) for d in range(3)]
                total = np.zeros_like(a)
                for d in range(3):
                    j1 = pb[d]
                    # -d^2/dx^2 acting on x^j exp(-b x^2)
                    term = 2.0 * b * (2 * j1 + 1) * plain[d] - 4.0 * b * b * overlap_1d(pa[d], j1 + 2, d)
                    if j1 >= 2:
                        term = term - j1 * (j1 - 1) * overlap_1d(pa[d], j1 - 2, d)
                    others = [plain[e] for e in range(3) if e != d]
                    total = total + term * others[0] * others[1]
                block[ia, ib] = float(coefficients @ total)
        return block

    def _nuclear_block(self, i: int, j: int) -> np.ndarray:
        pair = self._pair(i, j)
        L = pair.l_total
        block = np.zeros(pair.hermite.shape[:2])
        for Z, C in zip(self._molecule.charges, self._molecule.positions):
            R = hermite_coulomb(L, pair.p, pair.center - C)
            padded = np.zeros((len(pair.p), 3, 3, 3))
            padded[:, :L + 1, :L + 1, :L + 1] = R
            weights = 2.0 * math.pi / pair.p
            block -= Z * np.einsum("abkx,kx,k->ab", pair.hermite, padded.reshape(len(pair.p), 27), weights)
        return block

    def _quartet(self, bra: _ShellPair, ket: _ShellPair) -> np.ndarray:
        p = bra.p[:, None]
        q = ket.p[None, :]
        alpha = p * q / (p + q)
        pq = bra.center[:, None, :] - ket.center[None, :, :]
        L = bra.l_total + ket.l_total
        padded = np.zeros(alpha.shape + (5, 5, 5))
        padded[..., :L + 1, :L + 1, :L + 1] = hermite_coulomb(L, alpha, pq)
        gathered = padded[:, :, _T_IDX, _U_IDX, _V_IDX] * _KET_SIGN
        prefactor = 2.0 * math.pi ** 2.5 / (p * q * np.sqrt(p + q))
        return np.einsum("abkx,kl,klxy,cdly->abcd", bra.hermite, prefactor, gathered, ket.hermite,
                         optimize=True)

    def overlap(self) -> np.ndarray:
        return self._one_electron(self._overlap_block)

    def kinetic(self) -> np.ndarray:
        return self._one_electron(self._kinetic_block)

    def nuclear(self) -> np.ndarray:
        return self._one_electron(self._nuclear_block)

    def eri(self) -> np.ndarray:
        n_shells = len(self._shells)
        pair_keys = [(i, j) for i in range(n_shells) for j in range(i + 1)]
        eri = np.zeros((self._n,) * 4)
        for index, (i, j) in enumerate(pair_keys):
            for k, l in pair_keys[:index + 1]:
                block = self._quartet(self._pair(i, j), self._pair(k, l))
                if i == j:
                    block = 0.5 * (block + block.transpose(1, 0, 2, 3))
                if k == l:
                    block = 0.5 * (block + block.transpose(0, 1, 3, 2))
                if (i, j) == (k, l):
                    block = 0.5 * (block + block.transpose(2, 3, 0, 1))
                _store_quartet(eri, block, self._slice(i), self._slice(j), self._slice(k), self._slice(l))
        logger.debug(f"Evaluated {len(pair_keys) * (len(pair_keys) + 1) // 2} shell quartets")
        return eri

    def tables(self) -> IntegralTables:
        return IntegralTables(self.overlap(), self.kinetic(), self.nuclear(), self.eri(),
                              convention="paper", l_max=self._basis.l_max, basis_name=self._basis.name)


def _store_quartet(eri: np.ndarray, block: np.ndarray, si: slice, sj: slice, sk: slice, sl: slice):
    eri[si, sj, sk, sl] = block
    eri[sj, si, sk, sl] = block.transpose(1, 0, 2, 3)
    eri[si, sj, sl, sk] = block.transpose(0, 1, 3, 2)
    eri[sj, si, sl, sk] = block.transpose(1, 0, 3, 2)
    eri[sk, sl, si, sj] = block.transpose(2, 3, 0, 1)
    eri[sl, sk, si, sj] = block.transpose(3, 2, 0, 1)
    eri[sk, sl, sj, si] = block.transpose(2, 3, 1, 0)
    eri[sl, sk, sj, si] = block.transpose(3, 2, 1, 0)


def overlap_matrix(molecule: Molecule, basis: BasisSet) -> np.ndarray:
    return IntegralEngine(molecule, basis).overlap()


def kinetic_matrix(molecule: Molecule, basis: BasisSet) -> np.ndarray:
    """Matrix of -Laplacian (no factor 1/2)"""
    return IntegralEngine(molecule, basis).kinetic()


def nuclear_matrix(molecule: Molecule, basis: BasisSet) -> np.ndarray:
    return IntegralEngine(molecule, basis).nuclear()


def eri_tensor(molecule: Molecule, basis: BasisSet) -> np.ndarray:
    return IntegralEngine(molecule, basis).eri()


def compute_tables(molecule: Molecule, basis: BasisSet) -> IntegralTables:
    """All integral tables for (molecule, basis), with an overlap condition report"""
    tables = IntegralEngine(molecule, basis).tables()
    overlap_condition(tables)
    return tables


def core_hamiltonian(tables: IntegralTables) -> np.ndarray:
    return tables.hcore


def overlap_condition(tables: IntegralTables) -> OverlapCondition:
    eigenvalues = np.linalg.eigvalsh(tables.S)
    lambda_min, lambda_max = float(eigenvalues[0]), float(eigenvalues[-1])
    condition = lambda_max / lambda_min if lambda_min > 0.0 else math.inf
    report = OverlapCondition(lambda_min, lambda_max, condition)
    if condition > ILL_CONDITIONED:
        logger.warning(f"Ill-conditioned overlap matrix: condition number {condition:.3e}")
    else:
        logger.info(f"Overlap matrix condition number {condition:.3e}")
    return report


def _unique_eri_indices(n: int):
    """Canonical (mu>=nu, lambda>=sigma, mu nu >= lambda sigma) index order"""
    mu, nu = np.tril_indices(n)
    first, second = np.tril_indices(len(mu))
    return mu[first], nu[first], mu[second], nu[second]


def dump_tables(tables: IntegralTables, path: Union[str, Path]):
    """Write the little-endian binary dump of the tables"""
    path = Path(path)
    n = tables.n_functions
    tag = tables.convention.encode("ascii")
    if len(tag) > 8:
        raise ValueError(f"Convention tag too long for dump header: {tables.convention!r}")
    i, j, k, l = _unique_eri_indices(n)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(DUMP_MAGIC, DUMP_VERSION, n, tables.l_max, tag.ljust(8, b"\0")))
        for matrix in (tables.S, tables.T, tables.Vnuc):
            f.write(np.ascontiguousarray(matrix, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(tables.eri[i, j, k, l], dtype="<f8").tobytes())
    logger.info(f"Wrote integral dump with n={n} to {path}")


def load_tables(path: Union[str, Path]) -> IntegralTables:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Integral dump not found: {path}")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"Truncated integral dump: {path}")
    magic, version, n, l_max, tag = _HEADER.unpack_from(data)
    if magic != DUMP_MAGIC or version != DUMP_VERSION:
        raise ValueError(f"Not an integral dump (magic {magic!r}, version {version}): {path}")
    i, j, k, l = _unique_eri_indices(n)
    expected = _HEADER.size + 8 * (3 * n * n + len(i))
    if len(data) != expected:
        raise ValueError(f"Integral dump has {len(data)} bytes, expected {expected}: {path}")
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(float)
    S, T, V = (values[m * n * n:(m + 1) * n * n].reshape(n, n) for m in range(3))
    unique = values[3 * n * n:]
    eri = np.zeros((n, n, n, n))
    for a, b, c, d in ((i, j, k, l), (j, i, k, l), (i, j, l, k), (j, i, l, k),
                       (k, l, i, j), (l, k, i, j), (k, l, j, i), (l, k, j, i)):
        eri[a, b, c, d] = unique
    return IntegralTables(S, T, V, eri, convention=tag.rstrip(b"\0").decode("ascii"), l_max=l_max)
