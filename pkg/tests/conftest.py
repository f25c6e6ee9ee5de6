from pathlib import Path

import pytest

from core.hf.scf import GuessKind, scf_solve
from core.integrals.integrals import compute_tables
from core.molecule.molbasis import parse_input
from core.radial.radial import radial_scf

INPUTS = Path(__file__).resolve().parent.parent / "data" / "inputs"


def load_input(name: str):
    return parse_input((INPUTS / name).read_text())


class System:
    """Parsed input plus its integral tables"""

    def __init__(self, name: str):
        self.path = INPUTS / name
        self.molecule, self.basis, self.options = load_input(name)
        self.tables = compute_tables(self.molecule, self.basis)

    def solve(self, **kwargs):
        kwargs.setdefault("guess", GuessKind.CORE)
        return scf_solve(self.molecule, self.basis, tables=self.tables, **kwargs)


@pytest.fixture(scope="session")
def hydrogen():
    return System("h_sto3g.json")


@pytest.fixture(scope="session")
def helium():
    return System("he_even_tempered.json")


@pytest.fixture(scope="session")
def hydrogen_cp(hydrogen):
    result = hydrogen.solve()
    assert result.converged
    return result.critical_point


@pytest.fixture(scope="session")
def helium_cp(helium):
    result = helium.solve()
    assert result.converged
    return result.critical_point


@pytest.fixture(scope="session")
def radial_hydrogen():
    return radial_scf(1, 1)


@pytest.fixture(scope="session")
def radial_helium():
    return radial_scf(2, 2)
