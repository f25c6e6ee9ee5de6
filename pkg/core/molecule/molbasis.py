from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union
import hashlib
import json
import logging
import math
import re

import numpy as np

from core.molecule.basis_library import even_tempered_shells, sto3g_shells

logger = logging.getLogger(__name__)

SELF_OVERLAP_GUARD = 1e-14

_EVEN_TEMPERED_RE = re.compile(
    r"^even-tempered\(\s*([^,\s]+)\s*,\s*([^,\s]+)\s*,\s*([^,\s\)]+)\s*\)$")


class InputError(ValueError):
    """Malformed or invalid input document"""


class Convention(Enum):
    PAPER = "paper"
    STANDARD = "standard"

    @staticmethod
    def from_tag(tag: Union[str, "Convention"]) -> "Convention":
        if isinstance(tag, Convention):
            return tag
        try:
            return Convention(tag)
        except ValueError:
            raise InputError(f"Unknown convention tag: {tag!r}") from None


@dataclass(frozen=True)
class Atom:
    Z: int
    position: Tuple[float, float, float]

    def to_dict(self) -> Dict[str, Any]:
        return {"Z": self.Z, "position": list(self.position)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Atom":
        if not isinstance(data, dict):
            raise InputError(f"Atom entry must be an object, got {data!r}")
        Z = data.get("Z")
        if not isinstance(Z, int) or isinstance(Z, bool):
            raise InputError(f"Atom Z must be an integer, got {Z!r}")
        position = data.get("position")
        if (not isinstance(position, list) or len(position) != 3
                or not all(_is_number(x) for x in position)):
            raise InputError(f"Atom position must be a list of 3 numbers, got {position!r}")
        return cls(Z, tuple(float(x) for x in position))


@dataclass(frozen=True)
class Molecule:
    atoms: Tuple[Atom, ...]
    n_electrons: int

    def __post_init__(self):
        if self.n_electrons < 1:
            raise InputError("N ≥ 1 required")
        if not self.atoms:
            raise InputError("Molecule needs at least one atom")
        for atom in self.atoms:
            if atom.Z < 1:
                raise InputError(f"Nuclear charge must be ≥ 1, got {atom.Z}")
        positions = self.positions
        for a in range(len(self.atoms)):
            for b in range(a):
                if np.array_equal(positions[a], positions[b]):
                    raise InputError(f"Duplicate atom positions: atoms {b} and {a} at {self.atoms[a].position}")

    @property
    def positions(self) -> np.ndarray:
        return np.array([atom.position for atom in self.atoms], dtype=float)

    @property
    def charges(self) -> np.ndarray:
        return np.array([atom.Z for atom in self.atoms], dtype=float)

    def nuclear_repulsion(self) -> float:
        """Sum of Z_a Z_b / |x_a - x_b|; reported only, not part of E(Phi)"""
        positions = self.positions
        charges = self.charges
        total = 0.0
        for a in range(len(self.atoms)):
            for b in range(a):
                total += charges[a] * charges[b] / float(np.linalg.norm(positions[a] - positions[b]))
        return total

    def shifted(self, offset) -> "Molecule":
        """Rigidly translated copy"""
        offset = np.asarray(offset, dtype=float)
        atoms = tuple(Atom(a.Z, tuple(float(x) for x in np.asarray(a.position) + offset)) for a in self.atoms)
        return Molecule(atoms, self.n_electrons)

    def with_electrons(self, n_electrons: int) -> "Molecule":
        return Molecule(self.atoms, n_electrons)

    def to_dict(self) -> Dict[str, Any]:
        return {"atoms": [atom.to_dict() for atom in self.atoms], "n_electrons": self.n_electrons}


@dataclass(frozen=True)
class Shell:
    center: int
    angular_momentum: int
    exponents: Tuple[float, ...]
    coefficients: Tuple[float, ...]

    def __post_init__(self):
        if self.angular_momentum not in (0, 1):
            raise InputError(f"Angular momentum must be 0 or 1, got {self.angular_momentum}")
        if not self.exponents or len(self.exponents) != len(self.coefficients):
            raise InputError("Shell needs matching, non-empty exponent and coefficient lists")
        if any(not a > 0.0 for a in self.exponents):
            raise InputError(f"non-positive exponent in shell: {self.exponents}")
        if any(a <= b for a, b in zip(self.exponents, self.exponents[1:])):
            raise InputError(f"Shell exponents must be strictly decreasing: {self.exponents}")

    @property
    def primitives(self) -> List[Tuple[float, float]]:
        return list(zip(self.exponents, self.coefficients))

    @property
    def n_cartesian(self) -> int:
        return 1 if self.angular_momentum == 0 else 3

    @property
    def cartesian_powers(self) -> List[Tuple[int, int, int]]:
        if self.angular_momentum == 0:
            return [(0, 0, 0)]
        return [(1, 0, 0), (0, 1, 0), (0, 0, 1)]

    def self_overlap(self) -> float:
        """<chi|chi> of one Cartesian component"""
        a = np.asarray(self.exponents)
        d = np.asarray(self.coefficients)
        p = a[:, None] + a[None, :]
        pair = (math.pi / p) ** 1.5
        if self.angular_momentum == 1:
            pair = pair / (2.0 * p)
        return float(d @ pair @ d)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "center": self.center,
            "l": self.angular_momentum,
            "primitives": [{"exp": a, "coeff": d} for a, d in self.primitives],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], n_atoms: int) -> "Shell":
        if not isinstance(data, dict):
            raise InputError(f"Shell entry must be an object, got {data!r}")
        center = data.get("center")
        if not isinstance(center, int) or isinstance(center, bool) or not 0 <= center < n_atoms:
            raise InputError(f"Shell center must be an atom index in [0, {n_atoms}), got {center!r}")
        l = data.get("l", 0)
        primitives = data.get("primitives")
        if not isinstance(primitives, list) or not primitives:
            raise InputError("Shell needs a non-empty primitives list")
        try:
            exponents = tuple(float(p["exp"]) for p in primitives)
            coefficients = tuple(float(p["coeff"]) for p in primitives)
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"Malformed primitive in shell: {e}") from e
        return cls(center, l, exponents, coefficients)


@dataclass(frozen=True)
class BasisSet:
    shells: Tuple[Shell, ...]
    name: str = "explicit"

    @property
    def n_functions(self) -> int:
        return sum(shell.n_cartesian for shell in self.shells)

    @property
    def l_max(self) -> int:
        return max(shell.angular_momentum for shell in self.shells)

    def function_offsets(self) -> List[int]:
        offsets, total = [], 0
        for shell in self.shells:
            offsets.append(total)
            total += shell.n_cartesian
        return offsets

    def signature(self) -> str:
        """Stable hash of the explicit shell data"""
        text = json.dumps([shell.to_dict() for shell in self.shells], sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "shells": [shell.to_dict() for shell in self.shells]}


@dataclass(frozen=True)
class RunOptions:
    source_convention: Convention = Convention.PAPER
    title: str = ""
    scf: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"source_convention": self.source_convention.value, "title": self.title, "scf": dict(self.scf)}


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _shells_from_data(center: int, data) -> List[Shell]:
    return [Shell(center, l, tuple(exps), tuple(coefs)) for l, exps, coefs in data]


def _named_basis(spec: Union[str, Dict[str, Any]], molecule: Molecule,
                 convention: Convention) -> Tuple[BasisSet, Convention]:
    """Expand a basis keyword; returns the basis and the convention its exponents are in"""
    if isinstance(spec, dict):
        name = spec.get("name")
        if name != "even-tempered":
            raise InputError(f"Unknown basis name: {name!r}")
        try:
            alpha0, beta, k = float(spec["alpha0"]), float(spec["beta"]), int(spec["k"])
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"even-tempered basis needs alpha0, beta, k: {e}") from e
        l_max = spec.get("l", 0)
        label = f"even-tempered({alpha0!r}, {beta!r}, {k})" + (f"+l{l_max}" if l_max else "")
        return _even_tempered(molecule, alpha0, beta, k, l_max, label), convention

    if spec in ("sto3g-paper", "sto3g"):
        scale = 0.25 if spec == "sto3g-paper" else 1.0
        shells: List[Shell] = []
        for index, atom in enumerate(molecule.atoms):
            try:
                shells.extend(_shells_from_data(index, sto3g_shells(atom.Z, scale)))
            except ValueError as e:
                raise InputError(str(e)) from e
        tag = Convention.PAPER if spec == "sto3g-paper" else Convention.STANDARD
        return BasisSet(tuple(shells), spec), tag

    match = _EVEN_TEMPERED_RE.match(spec)
    if match:
        try:
            alpha0, beta, k = float(match.group(1)), float(match.group(2)), int(match.group(3))
        except ValueError as e:
            raise InputError(f"Malformed even-tempered basis {spec!r}: {e}") from e
        return _even_tempered(molecule, alpha0, beta, k, 0, spec), convention

    raise InputError(f"Unknown basis name: {spec!r}")


def _even_tempered(molecule: Molecule, alpha0: float, beta: float, k: int, l_max: int, label: str) -> BasisSet:
    if l_max not in (0, 1):
        raise InputError(f"even-tempered l must be 0 or 1, got {l_max!r}")
    try:
        data = even_tempered_shells(alpha0, beta, k, l_max)
    except ValueError as e:
        raise InputError(str(e)) from e
    shells: List[Shell] = []
    for index in range(len(molecule.atoms)):
        shells.extend(_shells_from_data(index, data))
    return BasisSet(tuple(shells), label)


def parse_input(text: str) -> Tuple[Molecule, BasisSet, RunOptions]:
    """Parse a JSON molecule document into paper-convention Molecule and BasisSet"""
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"Malformed input document: {e}") from e
    if not isinstance(document, dict):
        raise InputError("Input document must be a JSON object")

    convention = Convention.from_tag(document.get("convention", "paper"))
    atoms = document.get("atoms")
    if not isinstance(atoms, list) or not atoms:
        raise InputError("Input document needs a non-empty 'atoms' list")
    n_electrons = document.get("n_electrons")
    if not isinstance(n_electrons, int) or isinstance(n_electrons, bool):
        raise InputError(f"'n_electrons' must be an integer, got {n_electrons!r}")
    if n_electrons < 1:
        raise InputError("N ≥ 1 required")
    molecule = Molecule(tuple(Atom.from_dict(a) for a in atoms), n_electrons)

    if "basis" not in document:
        raise InputError("Input document needs a 'basis' entry")
    spec = document["basis"]
    if isinstance(spec, dict) and "shells" in spec:
        if not isinstance(spec["shells"], list) or not spec["shells"]:
            raise InputError("Explicit basis needs a non-empty 'shells' list")
        shells = tuple(Shell.from_dict(s, len(molecule.atoms)) for s in spec["shells"])
        basis, basis_convention = BasisSet(shells, str(spec.get("name", "explicit"))), convention
    elif isinstance(spec, (str, dict)):
        basis, basis_convention = _named_basis(spec, molecule, convention)
    else:
        raise InputError(f"Basis must be a name or an object, got {spec!r}")

    basis = rescale_convention(normalize_shells(basis), basis_convention, Convention.PAPER)
    molecule = rescale_molecule(molecule, convention, Convention.PAPER)
    if basis.n_functions < molecule.n_electrons:
        raise InputError(f"Basis has {basis.n_functions} functions but N={molecule.n_electrons} orbitals are needed")

    scf_overrides = document.get("scf", {})
    if not isinstance(scf_overrides, dict):
        raise InputError("'scf' entry must be an object")
    options = RunOptions(convention, str(document.get("title", "")), dict(scf_overrides))
    logger.debug(f"Parsed {len(molecule.atoms)} atoms, N={molecule.n_electrons}, basis {basis.name} "
                 f"with {basis.n_functions} functions")
    return molecule, basis, options


def serialize_input(molecule: Molecule, basis: BasisSet, options: Optional[RunOptions] = None) -> str:
    """Paper-convention JSON document with explicit shells; inverse of parse_input"""
    document: Dict[str, Any] = molecule.to_dict()
    document["convention"] = Convention.PAPER.value
    document["basis"] = basis.to_dict()
    if options is not None:
        if options.title:
            document["title"] = options.title
        if options.scf:
            document["scf"] = dict(options.scf)
    return json.dumps(document, sort_keys=True, indent=2)


def rescale_convention(basis: BasisSet, from_tag: Union[str, Convention],
                       to_tag: Union[str, Convention]) -> BasisSet:
    """Map a basis between the -Laplacian (paper) and -1/2 Laplacian (standard) conventions.

    standard -> paper is the dilation x -> x/2: exponents are divided by 4 and
    coefficients rescaled so each function keeps its norm. Exponent factors
    are powers of two, so exponents map exactly in both directions.
    """
    source, target = Convention.from_tag(from_tag), Convention.from_tag(to_tag)
    if source == target:
        return basis
    to_paper = target == Convention.PAPER
    shells = []
    for shell in basis.shells:
        l = shell.angular_momentum
        if to_paper:
            exponents = tuple(a / 4.0 for a in shell.exponents)
            factor = 2.0 ** (-1.5 - l)
        else:
            exponents = tuple(a * 4.0 for a in shell.exponents)
            factor = 2.0 ** (1.5 + l)
        shells.append(replace(shell, exponents=exponents,
                              coefficients=tuple(d * factor for d in shell.coefficients)))
    return BasisSet(tuple(shells), basis.name)


def rescale_molecule(molecule: Molecule, from_tag: Union[str, Convention],
                     to_tag: Union[str, Convention]) -> Molecule:
    source, target = Convention.from_tag(from_tag), Convention.from_tag(to_tag)
    if source == target:
        return molecule
    factor = 2.0 if target == Convention.PAPER else 0.5
    atoms = tuple(Atom(a.Z, tuple(x * factor for x in a.position)) for a in molecule.atoms)
    return Molecule(atoms, molecule.n_electrons)


def normalize_shells(basis: BasisSet) -> BasisSet:
    """Rescale every contracted function to unit self-overlap"""
    shells = []
    for shell in basis.shells:
        if any(not a > 0.0 for a in shell.exponents):
            raise ValueError(f"non-positive exponent in shell: {shell.exponents}")
        overlap = shell.self_overlap()
        if abs(overlap - 1.0) <= SELF_OVERLAP_GUARD:
            shells.append(shell)
            continue
        scale = 1.0 / math.sqrt(overlap)
        shells.append(replace(shell, coefficients=tuple(d * scale for d in shell.coefficients)))
    return BasisSet(tuple(shells), basis.name)
