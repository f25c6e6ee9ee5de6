import json

import numpy as np
import pytest

from core.molecule.basis_library import even_tempered_exponents, sto3g_shells
from core.molecule.molbasis import (Atom, BasisSet, Convention, InputError, Molecule, Shell, normalize_shells,
                                    parse_input, rescale_convention, rescale_molecule, serialize_input)
from tests.conftest import INPUTS, load_input


def document(**overrides):
    base = {"convention": "paper", "atoms": [{"Z": 2, "position": [0.0, 0.0, 0.0]}],
            "n_electrons": 2, "basis": "even-tempered(0.1, 3.0, 4)"}
    base.update(overrides)
    return json.dumps(base)


def test_hydrogen_document():
    molecule, basis, options = load_input("h_sto3g.json")
    assert molecule.n_electrons == 1
    assert [a.Z for a in molecule.atoms] == [1]
    assert basis.name == "sto3g-paper"
    assert basis.n_functions == 1
    assert options.source_convention == Convention.PAPER


def test_two_primitive_helium_has_two_functions():
    molecule, basis, _ = load_input("he_two_primitive.json")
    assert molecule.n_electrons == 2
    assert basis.n_functions == 2
    assert basis.l_max == 0


def test_standard_document_matches_paper_basis():
    _, paper, _ = load_input("h_sto3g.json")
    _, standard, options = load_input("h_sto3g_standard.json")
    assert options.source_convention == Convention.STANDARD
    assert paper.shells[0].exponents == standard.shells[0].exponents
    np.testing.assert_allclose(paper.shells[0].coefficients, standard.shells[0].coefficients, rtol=1e-12)


def test_standard_positions_are_doubled():
    molecule, _, _ = load_input("h2_plus_sto3g.json")
    np.testing.assert_array_equal(molecule.positions[:, 2], [-1.4, 1.4])
    assert molecule.nuclear_repulsion() == pytest.approx(1.0 / 2.8, rel=1e-14)


def test_normalized_shells_have_unit_self_overlap():
    _, basis, _ = load_input("li_even_tempered.json")
    for shell in basis.shells:
        assert shell.self_overlap() == pytest.approx(1.0, abs=1e-13)


def test_p_shells_from_even_tempered_object():
    text = document(basis={"name": "even-tempered", "alpha0": 0.2, "beta": 3.0, "k": 3, "l": 1})
    _, basis, _ = parse_input(text)
    assert basis.l_max == 1
    assert basis.n_functions == 3 + 3 * 3
    assert basis.function_offsets()[:4] == [0, 1, 2, 3]


def test_explicit_shells():
    text = document(n_electrons=1, basis={"name": "single", "shells": [
        {"center": 0, "l": 0, "primitives": [{"exp": 2.0, "coeff": 0.3}, {"exp": 0.5, "coeff": 0.7}]}]})
    _, basis, _ = parse_input(text)
    assert basis.name == "single"
    assert basis.shells[0].exponents == (2.0, 0.5)
    assert basis.shells[0].self_overlap() == pytest.approx(1.0, abs=1e-13)


def test_serialize_then_parse_keeps_molecule_and_shells():
    molecule, basis, options = load_input("h2_plus_sto3g.json")
    again, basis_again, _ = parse_input(serialize_input(molecule, basis, options))
    assert again == molecule
    assert basis_again.signature() == basis.signature()


def test_signature_is_stable_and_distinguishes_bases():
    _, a, _ = load_input("he_even_tempered.json")
    _, b, _ = load_input("he_even_tempered.json")
    _, c, _ = load_input("he_two_primitive.json")
    assert a.signature() == b.signature()
    assert a.signature() != c.signature()


def test_rescale_round_trip():
    _, basis, _ = load_input("li_even_tempered.json")
    there = rescale_convention(basis, "paper", "standard")
    back = rescale_convention(there, Convention.STANDARD, Convention.PAPER)
    for shell, original in zip(back.shells, basis.shells):
        assert shell.exponents == original.exponents
        np.testing.assert_allclose(shell.coefficients, original.coefficients, rtol=1e-14)
    assert there.shells[0].exponents[0] == 4.0 * basis.shells[0].exponents[0]


def test_rescale_molecule_round_trip():
    molecule, _, _ = load_input("h2_plus_sto3g.json")
    assert rescale_molecule(rescale_molecule(molecule, "paper", "standard"), "standard", "paper") == molecule


def test_library_data():
    assert len(sto3g_shells(1)) == 1
    assert len(sto3g_shells(3)) == 3
    assert even_tempered_exponents(0.5, 2.0, 3) == [0.5, 1.0, 2.0]
    with pytest.raises(ValueError):
        even_tempered_exponents(0.5, 1.0, 3)


@pytest.mark.parametrize("text, message", [
    ("{not json", "Malformed"),
    ("[1, 2]", "JSON object"),
    (document(n_electrons=0), "N ≥ 1"),
    (document(n_electrons=True), "integer"),
    (document(atoms=[]), "atoms"),
    (document(convention="cgs"), "convention"),
    (document(basis="6-31G"), "Unknown basis"),
    (document(basis="even-tempered(0.1, 0.5, 4)"), "beta"),
    (document(basis="even-tempered(0.1, 3.0, 1)"), "orbitals are needed"),
    (document(atoms=[{"Z": 1, "position": [0, 0, 0]}, {"Z": 1, "position": [0, 0, 0]}]), "Duplicate"),
    (document(atoms=[{"Z": 1, "position": [0, 0]}]), "position"),
    (document(basis={"shells": [{"center": 0, "primitives": [{"exp": -1.0, "coeff": 1.0}]}]}), "non-positive"),
    (document(basis={"shells": [{"center": 3, "primitives": [{"exp": 1.0, "coeff": 1.0}]}]}), "center"),
    (document(scf=[1]), "'scf'"),
])
def test_invalid_documents(text, message):
    with pytest.raises(InputError, match=message):
        parse_input(text)


def test_input_error_is_a_value_error():
    assert issubclass(InputError, ValueError)


def test_molecule_validation():
    with pytest.raises(InputError):
        Molecule((Atom(0, (0.0, 0.0, 0.0)),), 1)
    with pytest.raises(InputError):
        Molecule((), 1)


def test_shell_validation():
    with pytest.raises(InputError):
        Shell(0, 2, (1.0,), (1.0,))
    with pytest.raises(InputError):
        Shell(0, 0, (1.0, 2.0), (1.0, 1.0))


def test_normalize_rejects_non_positive_exponent():
    shell = Shell(0, 0, (1.0,), (1.0,))
    object.__setattr__(shell, "exponents", (0.0,))
    with pytest.raises(ValueError, match="non-positive"):
        normalize_shells(BasisSet((shell,)))


def test_sample_inputs_all_parse():
    for path in sorted(INPUTS.glob("*.json")):
        molecule, basis, _ = parse_input(path.read_text())
        assert basis.n_functions >= molecule.n_electrons
