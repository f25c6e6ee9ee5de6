from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union
import csv
import logging

import numpy as np
from scipy import integrate, linalg

from config.settings import settings_manager
from core.hf.hfcore import fix_signs
from core.radial.grid import RadialGrid, log_grid

logger = logging.getLogger(__name__)

EIGENVALUE_TOL = 1e-9
ORTHONORMALITY_TOL = 1e-8
BOUNDARY_AMPLITUDE = 1e-10
BOUNDARY_FRACTION = 0.98
POLISH_DROP = 1e-6
MIN_AMPLITUDE = 1e-250
NEWTON_TOL = 1e-3
NEWTON_EXCESS_TOL = 1e-10
DECAY_FRACTION = 0.9
FIT_TOL = 0.02


class ConvergenceError(RuntimeError):
    """Radial SCF did not reach the energy tolerance"""


class GridTooSmallError(RuntimeError):
    """Orbital amplitude near r_max is not negligible"""


@dataclass(frozen=True)
class RadialOptions:
    tol_energy: float = 1e-11
    max_iter: int = 200
    mixing: float = 0.25

    def __post_init__(self):
        if not self.tol_energy > 0.0:
            raise ValueError(f"tol_energy must be positive, got {self.tol_energy}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        if not 0.0 <= self.mixing < 1.0:
            raise ValueError(f"mixing must lie in [0, 1), got {self.mixing}")

    @classmethod
    def from_settings(cls, overrides: Optional[Dict[str, Any]] = None) -> "RadialOptions":
        defaults = settings_manager.settings.radial
        values = {f.name: getattr(defaults, f.name) for f in fields(cls)}
        for key, value in (overrides or {}).items():
            if key not in values:
                raise ValueError(f"Unknown radial option: {key}")
            if value is not None:
                values[key] = type(values[key])(value)
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class RadialOrbitalSet:
    """Reduced radial orbitals u_i = r phi_i on a log grid (column i) with their energies"""
    grid: RadialGrid
    Z: float
    u: np.ndarray
    e: np.ndarray
    energy: float
    coulomb: np.ndarray
    exchange: np.ndarray
    iterations: int = 0

    @property
    def n_orbitals(self) -> int:
        return self.u.shape[1]

    @property
    def v(self) -> np.ndarray:
        return self.u / np.sqrt(self.grid.r)[:, None]

    @property
    def energy_from_eigenvalues(self) -> float:
        """sum e_i - 1/2 sum (J_ij - K_ij)"""
        return float(np.sum(self.e) - 0.5 * np.sum(self.coulomb - self.exchange))

    def overlap(self) -> np.ndarray:
        return (self.u * self.grid.weights[:, None]).T @ self.u

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.overlap() - np.eye(self.n_orbitals))))

    def pair_potentials(self) -> np.ndarray:
        return pair_potentials(self.u, self.grid)

    def to_dict(self) -> Dict[str, Any]:
        return {"Z": self.Z, "N": self.n_orbitals, "grid": self.grid.to_dict(),
                "orbital_energies": [float(x) for x in self.e], "energy": self.energy,
                "energy_from_eigenvalues": self.energy_from_eigenvalues, "iterations": self.iterations,
                "orthonormality_error": self.orthonormality_error()}


@dataclass(frozen=True)
class DecayFit:
    window: Tuple[float, float]
    slopes: Tuple[float, ...]
    rates: Tuple[float, ...]
    decay_bound: float

    @property
    def within_decay_bound(self) -> Tuple[bool, ...]:
        return tuple(s <= self.decay_bound for s in self.slopes)

    def to_dict(self) -> Dict[str, Any]:
        return {"window": list(self.window), "slopes": list(self.slopes), "rates": list(self.rates),
                "decay_bound": self.decay_bound, "within_decay_bound": list(self.within_decay_bound)}


@dataclass(frozen=True)
class FarFieldReport:
    r_start: float
    newton_deviation: float
    newton_excess: float
    bound_margin: float
    offdiag_monopole: float
    monotone_from_below: bool

    @property
    def worst_margin(self) -> float:
        return self.bound_margin

    @property
    def newton_within_tolerance(self) -> bool:
        return self.newton_deviation <= NEWTON_TOL

    @property
    def passed(self) -> bool:
        """|r Q_ii - 1| stays within NEWTON_TOL and below the charge of phi_i outside r, and bound (b) holds"""
        return (self.newton_within_tolerance and self.newton_excess <= NEWTON_EXCESS_TOL
                and self.bound_margin > 0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {**asdict(self), "worst_margin": self.worst_margin, "passed": self.passed,
                "newton_within_tolerance": self.newton_within_tolerance}


@dataclass(frozen=True)
class H2NormReport:
    norms: Tuple[float, ...]

    @property
    def maximum(self) -> float:
        return max(self.norms)

    def to_dict(self) -> Dict[str, Any]:
        return {"norms": list(self.norms), "max": self.maximum}


@dataclass(frozen=True)
class VirialReport:
    kinetic: float
    nuclear: float
    two_electron: float

    @property
    def potential(self) -> float:
        return self.nuclear + self.two_electron

    @property
    def energy(self) -> float:
        return self.kinetic + self.potential

    @property
    def ratio(self) -> float:
        """-<V> / <-Delta>, 2 for Coulomb eigenstates"""
        return -self.potential / self.kinetic

    def to_dict(self) -> Dict[str, Any]:
        return {"kinetic": self.kinetic, "nuclear": self.nuclear, "two_electron": self.two_electron,
                "potential": self.potential, "energy": self.energy, "ratio": self.ratio}


@dataclass(frozen=True)
class WeightedTailNorm:
    eps_tilde: float
    on_grid: float
    beyond_grid: float
    outer_share: float

    @property
    def value(self) -> float:
        return self.on_grid + self.beyond_grid

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.value))

    def to_dict(self) -> Dict[str, Any]:
        return {"eps_tilde": self.eps_tilde, "value": self.value, "on_grid": self.on_grid,
                "beyond_grid": self.beyond_grid, "outer_share": self.outer_share, "finite": self.finite}


def pair_potentials(u: np.ndarray, grid: RadialGrid) -> np.ndarray:
    """y_ij(r_a) = sum_b w_b u_i u_j / max(r_a, r_b), shape (n, N, N)"""
    r, w = grid.r, grid.weights
    N = u.shape[1]
    y = np.empty((len(r), N, N))
    for i in range(N):
        for j in range(i, N):
            density = w * u[:, i] * u[:, j]
            inner = np.cumsum(density) / r
            outer = np.concatenate([np.cumsum((density / r)[::-1])[::-1][1:], [0.0]])
            y[:, i, j] = y[:, j, i] = inner + outer
    return y


def tail_pair_potentials(u: np.ndarray, grid: RadialGrid) -> np.ndarray:
    """y_ij(r) = delta_ij / r + integral over r' > r of u_i u_j (1/r' - 1/r), for far-tail accuracy"""
    r, w = grid.r, grid.weights
    N = u.shape[1]
    y = np.empty((len(r), N, N))
    for i in range(N):
        for j in range(i, N):
            density = w * u[:, i] * u[:, j]
            beyond_over_r = np.cumsum((density / r)[::-1])[::-1]
            beyond = np.cumsum(density[::-1])[::-1]
            y[:, i, j] = y[:, j, i] = (1.0 / r if i == j else 0.0) + beyond_over_r - beyond / r
    return y


def _two_body_matrix(v: np.ndarray, grid: RadialGrid) -> np.ndarray:
    """diag(r^2 J) + X in the v variables; X = -(delta / max) o sum_j p_j p_j^T with p_j = r^2 v_j"""
    r = grid.r
    r2 = r ** 2
    y = pair_potentials(np.sqrt(r)[:, None] * v, grid)
    hartree = np.einsum("ajj->a", y)
    p = r2[:, None] * v
    matrix = -grid.coulomb_kernel * (p @ p.T)
    matrix[np.diag_indices_from(matrix)] += r2 * hartree
    return matrix


def _lowest_levels(A: np.ndarray, grid: RadialGrid, N: int, shift: float) -> Tuple[np.ndarray, np.ndarray]:
    """N lowest eigenpairs of A v = e diag(r^2) v via the inverted pencil diag(r^2) v = mu (A - shift r^2) v"""
    r2 = grid.r ** 2
    n = len(r2)
    K = A - shift * np.diag(r2)
    try:
        mu, V = linalg.eigh(np.diag(r2), K, subset_by_index=[n - N, n - 1])
    except linalg.LinAlgError as e:
        raise RuntimeError(f"Radial eigensolver failure: {e}") from e
    mu, V = mu[::-1], V[:, ::-1]
    energies = shift + 1.0 / mu
    norms = np.sqrt(grid.delta * np.einsum("a,ai,ai->i", r2, V, V))
    return energies, fix_signs(V / norms[None, :])


def _energy_parts(u: np.ndarray, v: np.ndarray, Z: float, grid: RadialGrid):
    y = pair_potentials(u, grid)
    w = grid.weights
    coulomb = np.einsum("a,ai,ajj->ij", w, u ** 2, y)
    exchange = np.einsum("a,ai,aj,aij->ij", w, u, u, y)
    kinetic = grid.delta * np.einsum("ai,ab,bi->", v, grid.kinetic, v, optimize=True)
    nuclear = -Z * float(np.sum(w[:, None] * u ** 2 / grid.r[:, None]))
    return float(kinetic), nuclear, coulomb, exchange


def _polish_orbital(i: int, u: np.ndarray, e: np.ndarray, y: np.ndarray, Z: float,
                    grid: RadialGrid) -> np.ndarray:
    """Inhomogeneous Numerov solve of orbital i beyond the point where it falls below POLISH_DROP of its peak"""
    r, delta = grid.r, grid.delta
    n, N = u.shape
    magnitude = np.abs(u[:, i])
    above = np.nonzero(magnitude >= POLISH_DROP * magnitude.max())[0]
    start = int(above[-1])
    if start > n - 4:
        return u[:, i]

    others = [j for j in range(N) if j != i]
    local = -Z / r + sum((y[:, j, j] for j in others), np.zeros_like(r))
    q = 0.25 + r ** 2 * (local - e[i])
    source = r ** 1.5 * sum((y[:, i, j] * u[:, j] for j in others), np.zeros_like(r))
    v = u[:, i] / np.sqrt(r)

    kappa = np.sqrt(-e[i])
    beta = (Z - N + 1) / (2.0 * kappa)
    ratio_u = np.exp(-kappa * (r[-1] - r[-2])) * (r[-1] / r[-2]) ** beta
    ratio_v = ratio_u * np.sqrt(r[-2] / r[-1])

    nodes = np.arange(start + 1, n)
    m = len(nodes)
    inv_d2 = 1.0 / delta ** 2
    banded = np.zeros((3, m))
    rhs = np.zeros(m)
    interior = nodes[:-1]
    banded[1, :-1] = -2.0 * inv_d2 - 10.0 * q[interior] / 12.0
    banded[0, 1:] = inv_d2 - q[interior + 1] / 12.0
    banded[2, :-2] = inv_d2 - q[interior[1:] - 1] / 12.0
    rhs[:-1] = -(source[interior + 1] + 10.0 * source[interior] + source[interior - 1]) / 12.0
    rhs[0] -= (inv_d2 - q[start] / 12.0) * v[start]
    banded[1, -1] = 1.0
    banded[2, -2] = -ratio_v
    tail = linalg.solve_banded((1, 1), banded, rhs)

    polished = u[:, i].copy()
    polished[start + 1:] = tail * np.sqrt(r[start + 1:])
    return polished


def polish_tails(u: np.ndarray, e: np.ndarray, Z: float, grid: RadialGrid, passes: int = 2) -> np.ndarray:
    """Recompute every orbital tail with relative accuracy; exchange sources use the previous pass"""
    u = np.array(u, dtype=float)
    for _ in range(passes):
        y = tail_pair_potentials(u, grid)
        u = np.stack([_polish_orbital(i, u, e, y, Z, grid) for i in range(u.shape[1])], axis=1)
    return u


def _check_boundary(u: np.ndarray, grid: RadialGrid):
    outer = (grid.r >= BOUNDARY_FRACTION * grid.r_max)
    outer[-1] = False
    if not np.any(outer):
        return
    amplitude = float(np.max(np.abs(u[outer])))
    if amplitude > BOUNDARY_AMPLITUDE:
        raise GridTooSmallError(f"Orbital amplitude {amplitude:.3e} near r_max={grid.r_max}; enlarge the grid")


def radial_scf(Z: float, N: int, grid: Optional[RadialGrid] = None,
               options: Optional[RadialOptions] = None) -> RadialOrbitalSet:
    """Spinless N-orbital Hartree-Fock for an s-symmetric atom of charge Z"""
    if not Z > 0:
        raise ValueError(f"Nuclear charge must be positive, got {Z}")
    if N < 1:
        raise ValueError("N ≥ 1 required")
    grid = grid or log_grid()
    options = options or RadialOptions.from_settings()
    r = grid.r
    sqrt_r = np.sqrt(r)
    core = grid.kinetic + np.diag(-Z * r)
    shift = -0.25 * Z ** 2 - 1.0

    e, v = _lowest_levels(core, grid, N, shift)
    previous_potential = None
    previous_energy = None
    for iteration in range(1, options.max_iter + 1):
        potential = _two_body_matrix(v, grid)
        if previous_potential is not None and options.mixing > 0.0:
            potential = (1.0 - options.mixing) * potential + options.mixing * previous_potential
        e_new, v_new = _lowest_levels(core + potential, grid, N, shift)
        u_new = sqrt_r[:, None] * v_new
        kinetic, nuclear, coulomb, exchange = _energy_parts(u_new, v_new, Z, grid)
        energy = kinetic + nuclear + 0.5 * float(np.sum(coulomb - exchange))
        logger.debug(f"Radial iteration {iteration}: E={energy:.12f} eps={np.array2string(e_new, precision=10)}")
        converged = (previous_energy is not None and abs(energy - previous_energy) <= options.tol_energy
                     and float(np.max(np.abs(e_new - e))) <= EIGENVALUE_TOL)
        previous_potential, previous_energy = potential, energy
        e, v = e_new, v_new
        if converged:
            break
    else:
        raise ConvergenceError(f"Radial SCF for Z={Z}, N={N} did not converge in {options.max_iter} iterations")

    if not e[-1] < 0.0:
        raise ValueError(f"Only levels below {N} are bound for Z={Z}: e_N = {e[-1]:.6g}")
    u = polish_tails(sqrt_r[:, None] * v, e, Z, grid)
    _check_boundary(u, grid)
    orbitals = RadialOrbitalSet(grid, float(Z), u, e, energy, coulomb, exchange, iteration)
    if orbitals.orthonormality_error() > ORTHONORMALITY_TOL:
        logger.warning(f"Radial orbitals deviate from orthonormality by {orbitals.orthonormality_error():.3e}")
    logger.info(f"Radial SCF Z={Z} N={N} converged in {iteration} iterations: E={energy:.12f}")
    return orbitals


def default_window(grid: RadialGrid) -> Tuple[float, float]:
    lo, hi = settings_manager.window_fractions()
    return lo * grid.r_max, hi * grid.r_max


def decay_fit(orbs: RadialOrbitalSet, window: Optional[Sequence[float]] = None) -> DecayFit:
    """Least-squares slope of log|phi_i| = log|u_i / r| over the window, past the last node"""
    grid = orbs.grid
    r_lo, r_hi = tuple(window) if window is not None else default_window(grid)
    if not grid.r[0] <= r_lo < r_hi <= grid.r_max:
        raise ValueError(f"Window ({r_lo}, {r_hi}) must lie inside the grid")
    Z, N = orbs.Z, orbs.n_orbitals
    slopes = []
    for i in range(N):
        turning = (Z - N + 1) / (-orbs.e[i]) if orbs.e[i] < 0.0 else np.inf
        if r_lo < turning:
            logger.warning(f"Fit window starts at {r_lo} inside the classical region of orbital {i} (r_t={turning:.3g})")
        inside = (grid.r >= r_lo) & (grid.r <= r_hi)
        r, u = grid.r[inside], orbs.u[inside, i]
        signs = np.sign(u)
        changes = np.nonzero(signs[1:] != signs[:-1])[0]
        if len(changes):
            r, u = r[changes[-1] + 1:], u[changes[-1] + 1:]
        keep = np.abs(u) > MIN_AMPLITUDE
        r, u = r[keep], u[keep]
        if len(r) < 10:
            raise ValueError(f"Too few usable nodes for the decay fit of orbital {i} in ({r_lo}, {r_hi})")
        slopes.append(float(np.polyfit(r, np.log(np.abs(u) / r), 1)[0]))
    rates = tuple(float(-np.sqrt(-x)) if x < 0.0 else 0.0 for x in orbs.e)
    bound = -float(np.sqrt(DECAY_FRACTION * np.min(-orbs.e))) + FIT_TOL
    return DecayFit((float(r_lo), float(r_hi)), tuple(slopes), rates, bound)


def farfield_q_check(orbs: RadialOrbitalSet, grid: Optional[RadialGrid] = None,
                     r_start: Optional[float] = None) -> FarFieldReport:
    """Newton's theorem for Q_ii and the two-region bound |Q_ij(r)| < 2/r + 2 |grad phi_i| |phi_j|_{|y|>r/2}"""
    grid = grid or orbs.grid
    if grid.n_points != orbs.grid.n_points or grid.r_max != orbs.grid.r_max:
        raise ValueError("Grid does not match the orbitals")
    r_start = settings_manager.settings.radial.far_field_r if r_start is None else r_start
    r, w = grid.r, grid.weights
    u = orbs.u
    N = orbs.n_orbitals
    y = tail_pair_potentials(u, grid)
    tail = r >= r_start
    if not np.any(tail):
        raise ValueError(f"No grid nodes beyond r={r_start}")

    mass_beyond = np.cumsum((w[:, None] * u ** 2)[::-1], axis=0)[::-1]
    newton = r[tail, None] * np.einsum("aii->ai", y[tail])
    newton_deviation = float(np.max(np.abs(newton - 1.0)))
    newton_excess = float(np.max(np.abs(newton - 1.0) - mass_beyond[tail]))
    monotone = bool(np.all(np.diff(newton, axis=0) >= -1e-12) and np.all(newton <= 1.0 + 1e-12))

    v = orbs.v
    gradient = np.sqrt(np.maximum(grid.delta * np.einsum("ai,ab,bi->i", v, grid.kinetic, v, optimize=True), 0.0))
    half = np.clip(np.searchsorted(r, 0.5 * r[tail], side="right") - 1, 0, len(r) - 1)
    outer_norm = np.sqrt(np.maximum(mass_beyond[half], 0.0))
    bound = 2.0 / r[tail, None, None] + 2.0 * gradient[None, :, None] * outer_norm[:, None, :]
    margin = float(np.min(bound - np.abs(y[tail])))

    offdiag = 0.0
    for i in range(N):
        for j in range(i + 1, N):
            offdiag = max(offdiag, float(np.max(np.abs(r[tail] * y[tail, i, j]))))
    report = FarFieldReport(float(r_start), newton_deviation, newton_excess, margin, offdiag, monotone)
    if not report.passed:
        logger.warning(f"Far-field check failed: Newton deviation {newton_deviation:.3e}, margin {margin:.3e}")
    return report


def h2norm_report(orbs: RadialOrbitalSet) -> H2NormReport:
    """|Delta phi_i| = |u_i''| in L2(dr), with u'' taken from the radial equation"""
    grid = orbs.grid
    r, w = grid.r, grid.weights
    u = orbs.u
    y = orbs.pair_potentials()
    hartree = np.einsum("ajj->a", y)
    norms = []
    for i in range(orbs.n_orbitals):
        second = (-orbs.Z / r + hartree - orbs.e[i]) * u[:, i] - np.einsum("aj,aj->a", y[:, i, :], u)
        norms.append(float(np.sqrt(np.sum(w * second ** 2))))
    return H2NormReport(tuple(norms))


def virial_report(orbs: RadialOrbitalSet) -> VirialReport:
    kinetic, nuclear, coulomb, exchange = _energy_parts(orbs.u, orbs.v, orbs.Z, orbs.grid)
    return VirialReport(kinetic, nuclear, 0.5 * float(np.sum(coulomb - exchange)))


def weighted_tail_norm(orbs: RadialOrbitalSet, eps_tilde: float) -> WeightedTailNorm:
    """sum_i integral of exp(2 sqrt(eps~) r) u_i^2, with the asymptotic remainder beyond r_max"""
    if not eps_tilde > 0.0:
        raise ValueError(f"eps_tilde must be positive, got {eps_tilde}")
    grid = orbs.grid
    r, w = grid.r, grid.weights
    root = np.sqrt(eps_tilde)
    with np.errstate(divide="ignore"):
        log_u2 = 2.0 * np.log(np.abs(orbs.u))
    integrand = np.exp(2.0 * root * r[:, None] + log_u2) * w[:, None]
    on_grid = float(np.sum(integrand))
    outer = r >= DECAY_FRACTION * grid.r_max
    outer_share = float(np.sum(integrand[outer]) / on_grid) if on_grid > 0.0 else 0.0

    beyond = 0.0
    N = orbs.n_orbitals
    for i in range(N):
        kappa = np.sqrt(-orbs.e[i]) if orbs.e[i] < 0.0 else 0.0
        if kappa <= root:
            beyond = np.inf
            break
        beta = (orbs.Z - N + 1) / (2.0 * kappa)
        edge = float(np.exp(log_u2[-1, i] + 2.0 * root * grid.r_max))
        rest, _ = integrate.quad(
            lambda x: (x / grid.r_max) ** (2.0 * beta) * np.exp(-2.0 * (kappa - root) * (x - grid.r_max)),
            grid.r_max, np.inf)
        beyond += edge * rest
    return WeightedTailNorm(float(eps_tilde), on_grid, float(beyond), outer_share)


def write_tail_csv(orbs: RadialOrbitalSet, path: Union[str, Path]):
    path = Path(path)
    y = tail_pair_potentials(orbs.u, orbs.grid)
    N = orbs.n_orbitals
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["r"] + [f"u_{i + 1}" for i in range(N)] + [f"Q_{i + 1}{i + 1}" for i in range(N)])
        for a, radius in enumerate(orbs.grid.r):
            writer.writerow([repr(float(radius))] + [repr(float(x)) for x in orbs.u[a]]
                            + [repr(float(y[a, i, i])) for i in range(N)])
    logger.info(f"Wrote radial tail profile with {len(orbs.grid.r)} rows to {path}")
