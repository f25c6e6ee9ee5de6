import math

import numpy as np
import pytest
from scipy import integrate, linalg

from core.integrals.boys import boys, boys_table
from core.integrals.integrals import (DUMP_MAGIC, compute_tables, core_hamiltonian, dump_tables, load_tables,
                                      overlap_condition)
from core.molecule.basis_library import sto3g_shells
from core.molecule.molbasis import Atom, BasisSet, Molecule, Shell, normalize_shells, parse_input
from tests.conftest import load_input


def single_gaussian(exponent: float, l: int = 0, Z: int = 1):
    molecule = Molecule((Atom(Z, (0.0, 0.0, 0.0)),), 1)
    basis = normalize_shells(BasisSet((Shell(0, l, (exponent,), (1.0,)),)))
    return molecule, basis


def two_centers(R, shells):
    molecule = Molecule((Atom(1, (0.0, 0.0, 0.0)), Atom(1, tuple(R))), 1)
    return molecule, normalize_shells(BasisSet(tuple(shells)))


@pytest.fixture(scope="module")
def sp_pair():
    molecule, basis, _ = parse_input("""{
        "atoms": [{"Z": 1, "position": [0.0, 0.0, 0.0]}, {"Z": 2, "position": [0.3, -0.4, 1.1]}],
        "n_electrons": 1,
        "basis": {"name": "even-tempered", "alpha0": 0.3, "beta": 3.0, "k": 2, "l": 1}}""")
    return molecule, basis, compute_tables(molecule, basis)


@pytest.mark.parametrize("a", [0.05, 0.7, 12.0])
def test_single_s_gaussian_closed_forms(a):
    tables = compute_tables(*single_gaussian(a, Z=2))
    assert tables.S[0, 0] == pytest.approx(1.0, abs=1e-13)
    assert tables.T[0, 0] == pytest.approx(3.0 * a, rel=1e-12)
    assert tables.Vnuc[0, 0] == pytest.approx(-2.0 * 2.0 * math.sqrt(2.0 * a / math.pi), rel=1e-12)
    assert tables.eri[0, 0, 0, 0] == pytest.approx(2.0 * math.sqrt(a / math.pi), rel=1e-12)


def test_single_p_gaussian_kinetic():
    a = 0.9
    tables = compute_tables(*single_gaussian(a, l=1))
    np.testing.assert_allclose(tables.S, np.eye(3), atol=1e-13)
    np.testing.assert_allclose(tables.T, 5.0 * a * np.eye(3), rtol=1e-12, atol=1e-13)


def test_two_center_s_overlap_and_attraction():
    a, b, R = 0.4, 1.3, 1.7
    molecule, basis = two_centers((0.0, 0.0, R), [Shell(0, 0, (a,), (1.0,)), Shell(1, 0, (b,), (1.0,))])
    tables = compute_tables(molecule, basis)
    overlap = (2.0 * math.sqrt(a * b) / (a + b)) ** 1.5 * math.exp(-a * b * R * R / (a + b))
    assert tables.S[0, 1] == pytest.approx(overlap, rel=1e-12)
    own = -2.0 * math.sqrt(2.0 * a / math.pi)
    other = -math.erf(math.sqrt(2.0 * a) * R) / R
    assert tables.Vnuc[0, 0] == pytest.approx(own + other, rel=1e-12)


def test_p_attraction_against_multipole_quadrature():
    a, R = 0.6, 1.2
    molecule, basis = two_centers((0.0, 0.0, R), [Shell(0, 1, (a,), (1.0,))])
    tables = compute_tables(molecule, basis)
    norm2 = (2.0 * a / math.pi) ** 1.5 * 4.0 * a

    # |p_z|^2 = norm2 r^2 cos^2 e^{-2a r^2}; cos^2 carries only the l = 0 and l = 2 multipoles
    def radial(r, kernel):
        return 2.0 * math.pi * norm2 * r ** 4 * math.exp(-2.0 * a * r * r) * kernel(r)

    def off_center(r):
        small, large = min(r, R), max(r, R)
        return (2.0 / 3.0) / large + (4.0 / 15.0) * small ** 2 / large ** 3

    own, _ = integrate.quad(radial, 0.0, np.inf, args=(lambda r: (2.0 / 3.0) / r,), epsabs=0.0, epsrel=1e-13)
    inner, _ = integrate.quad(radial, 0.0, R, args=(off_center,), epsabs=0.0, epsrel=1e-13)
    outer, _ = integrate.quad(radial, R, np.inf, args=(off_center,), epsabs=0.0, epsrel=1e-13)
    assert tables.Vnuc[2, 2] == pytest.approx(-(own + inner + outer), rel=1e-10)
    assert tables.Vnuc[0, 0] == pytest.approx(tables.Vnuc[1, 1], rel=1e-13)



def test_axis_permutation_moves_p_components():
    shells = [Shell(0, 0, (0.8,), (1.0,)), Shell(1, 1, (0.5,), (1.0,))]
    along_x = compute_tables(*two_centers((1.5, 0.0, 0.0), shells))
    along_y = compute_tables(*two_centers((0.0, 1.5, 0.0), shells))
    assert along_x.S[0, 1] == pytest.approx(along_y.S[0, 2], rel=1e-13)
    assert along_x.S[0, 2] == pytest.approx(0.0, abs=1e-15)
    assert along_x.S[0, 3] == pytest.approx(0.0, abs=1e-15)
    assert along_x.Vnuc[0, 1] == pytest.approx(along_y.Vnuc[0, 2], rel=1e-12)
    assert along_x.eri[0, 1, 0, 1] == pytest.approx(along_y.eri[0, 2, 0, 2], rel=1e-12)


def test_tables_are_symmetric(sp_pair):
    _, _, tables = sp_pair
    for matrix in (tables.S, tables.T, tables.Vnuc):
        np.testing.assert_array_equal(matrix, matrix.T)
    eri = tables.eri
    scale = float(np.max(np.abs(eri)))
    for axes in ((1, 0, 2, 3), (0, 1, 3, 2), (2, 3, 0, 1), (3, 2, 1, 0)):
        np.testing.assert_allclose(eri, eri.transpose(axes), rtol=0.0, atol=1e-14 * scale)


def test_overlap_and_kinetic_are_positive_definite(sp_pair):
    _, _, tables = sp_pair
    assert np.linalg.eigvalsh(tables.S)[0] > 0.0
    assert np.linalg.eigvalsh(tables.T)[0] > 0.0
    report = overlap_condition(tables)
    assert report.lambda_min > 0.0
    assert report.condition == pytest.approx(report.lambda_max / report.lambda_min)


def test_coulomb_tensor_is_positive_semidefinite(sp_pair):
    _, _, tables = sp_pair
    n = tables.n_functions
    supermatrix = tables.eri.reshape(n * n, n * n)
    assert np.linalg.eigvalsh(supermatrix)[0] > -1e-12


def test_translation_invariance(sp_pair):
    molecule, basis, tables = sp_pair
    moved = compute_tables(molecule.shifted([2.0, -1.0, 0.5]), basis)
    for name in ("S", "T", "Vnuc", "eri"):
        np.testing.assert_allclose(getattr(moved, name), getattr(tables, name), rtol=1e-10, atol=1e-12)


def test_core_hamiltonian(sp_pair):
    _, _, tables = sp_pair
    np.testing.assert_array_equal(core_hamiltonian(tables), tables.T + tables.Vnuc)


def test_paper_tables_are_dilated_standard_tables():
    molecule, basis, _ = load_input("h2_plus_sto3g.json")
    paper = compute_tables(molecule, basis)
    standard_molecule = Molecule((Atom(1, (0.0, 0.0, -0.7)), Atom(1, (0.0, 0.0, 0.7))), 1)
    shells = [Shell(c, l, exps, coefs) for c in range(2) for l, exps, coefs in sto3g_shells(1)]
    standard = compute_tables(standard_molecule, normalize_shells(BasisSet(tuple(shells))))
    h_standard = 0.5 * standard.T + standard.Vnuc
    paper_levels = linalg.eigh(paper.hcore, paper.S, eigvals_only=True)
    standard_levels = linalg.eigh(h_standard, standard.S, eigvals_only=True)
    np.testing.assert_allclose(2.0 * paper_levels, standard_levels, rtol=1e-10)
    np.testing.assert_allclose(paper.S, standard.S, rtol=1e-12, atol=1e-14)



def test_dump_round_trip(tmp_path, sp_pair):
    _, _, tables = sp_pair
    path = tmp_path / "tables.bin"
    dump_tables(tables, path)
    assert path.read_bytes()[:4] == DUMP_MAGIC
    loaded = load_tables(path)
    assert loaded.l_max == 1
    assert loaded.convention == "paper"
    for name in ("S", "T", "Vnuc"):
        np.testing.assert_array_equal(getattr(loaded, name), getattr(tables, name))
    np.testing.assert_allclose(loaded.eri, tables.eri, rtol=0.0, atol=1e-15)


def test_dump_errors(tmp_path, sp_pair):
    with pytest.raises(FileNotFoundError):
        load_tables(tmp_path / "missing.bin")
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValueError, match="Not an integral dump"):
        load_tables(bad)
    _, _, tables = sp_pair
    truncated = tmp_path / "truncated.bin"
    dump_tables(tables, truncated)
    truncated.write_bytes(truncated.read_bytes()[:-8])
    with pytest.raises(ValueError, match="bytes"):
        load_tables(truncated)


def test_boys_at_zero():
    np.testing.assert_allclose(boys_table(4, 0.0), [1.0 / (2 * m + 1) for m in range(5)], rtol=1e-15)
    assert boys(0, 0.0) == 1.0


@pytest.mark.parametrize("x", [1e-9, 1e-3, 0.5, 3.0, 25.0, 80.0])
def test_boys_zero_order_closed_form(x):
    expected = 0.5 * math.sqrt(math.pi / x) * math.erf(math.sqrt(x))
    assert boys(0, x) == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("m", [1, 2, 4])
@pytest.mark.parametrize("x", [5e-3, 0.7, 6.0, 40.0])
def test_boys_against_quadrature(m, x):
    expected, _ = integrate.quad(lambda t: t ** (2 * m) * math.exp(-x * t * t), 0.0, 1.0,
                                 epsabs=0.0, epsrel=1e-13)
    assert boys(m, x) == pytest.approx(expected, rel=1e-11)


def test_boys_vectorized_matches_scalar():
    x = np.array([0.0, 0.004, 0.02, 1.0, 30.0])
    table = boys_table(3, x)
    assert table.shape == (4, 5)
    for m in range(4):
        for k, value in enumerate(x):
            assert table[m, k] == pytest.approx(boys(m, float(value)), rel=1e-12)


def test_boys_rejects_bad_arguments():
    with pytest.raises(ValueError):
        boys_table(-1, 1.0)
    with pytest.raises(ValueError):
        boys(0, -0.5)
