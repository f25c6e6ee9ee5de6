import numpy as np
import pytest
from scipy import linalg
from scipy.stats import ortho_group

from core.integrals.integrals import compute_tables
from core.hf.hfcore import (OrbitalSet, bivariate_energy, build_fock, canonicalize, coulomb_exchange_pairs,
                            density_matrix, energy_components, exchange_pair_matrix, fix_signs, hf_energy,
                            lagrangian, orthonormalize, pair_potential_matrix, pairing)
from tests.conftest import load_input


@pytest.fixture(scope="module")
def random_orbitals(helium):
    rng = np.random.default_rng(7)
    C = orthonormalize(rng.standard_normal((helium.tables.n_functions, 2)), helium.tables.S)
    return OrbitalSet.from_coefficients(C)


def test_orbital_set_shapes():
    orbitals = OrbitalSet(np.ones(3), [0.5])
    assert orbitals.C.shape == (3, 1)
    assert orbitals.n_basis == 3 and orbitals.n_orbitals == 1
    with pytest.raises(ValueError):
        OrbitalSet(np.ones((3, 2)), [0.5])
    with pytest.raises(ValueError):
        orbitals.C[0, 0] = 2.0


def test_orthonormalize(helium, random_orbitals):
    assert random_orbitals.constraint_error(helium.tables.S) < 1e-12
    with pytest.raises(ValueError):
        orthonormalize(np.ones((helium.tables.n_functions, 2)), helium.tables.S)


def test_density_is_projector_in_overlap_metric(helium, random_orbitals):
    D = density_matrix(random_orbitals)
    S = helium.tables.S
    np.testing.assert_allclose(D @ S @ D, D, atol=1e-10)
    assert np.trace(D @ S) == pytest.approx(2.0, abs=1e-12)


def test_energy_components_sum_to_energy(helium, random_orbitals):
    parts = energy_components(random_orbitals, helium.tables)
    assert parts.total == pytest.approx(hf_energy(random_orbitals, helium.tables), abs=1e-12)
    assert parts.coulomb + parts.exchange >= -1e-12
    assert parts.to_dict()["total"] == parts.total


def test_pair_sums_match_two_electron_energy(helium, random_orbitals):
    J, K = coulomb_exchange_pairs(random_orbitals, helium.tables)
    np.testing.assert_allclose(np.diag(J), np.diag(K), rtol=1e-12)
    upper = np.triu_indices(2, k=1)
    parts = energy_components(random_orbitals, helium.tables)
    assert float(np.sum((J - K)[upper])) == pytest.approx(parts.coulomb + parts.exchange, abs=1e-11)


def test_energy_is_rotation_invariant(helium, random_orbitals):
    U = ortho_group.rvs(2, random_state=3)
    rotated = OrbitalSet.from_coefficients(random_orbitals.C @ U)
    assert hf_energy(rotated, helium.tables) == pytest.approx(hf_energy(random_orbitals, helium.tables), abs=1e-12)


def test_fock_is_rotation_invariant(helium, random_orbitals):
    U = ortho_group.rvs(2, random_state=8)
    rotated = OrbitalSet.from_coefficients(random_orbitals.C @ U)
    before = build_fock(density_matrix(random_orbitals), helium.tables)
    after = build_fock(density_matrix(rotated), helium.tables)
    np.testing.assert_allclose(after.F, before.F, atol=1e-10)
    np.testing.assert_allclose(after.Kmat, before.Kmat, atol=1e-10)


def test_full_occupation_density_is_inverse_overlap():
    molecule, basis, _ = load_input("he_two_primitive.json")
    tables = compute_tables(molecule, basis)
    assert tables.n_functions == molecule.n_electrons == 2
    rng = np.random.default_rng(11)
    C = orthonormalize(rng.standard_normal((2, 2)), tables.S)
    D = density_matrix(OrbitalSet.from_coefficients(C))
    np.testing.assert_allclose(D, linalg.inv(tables.S), rtol=1e-10, atol=1e-12)


def test_single_orbital_has_no_self_interaction(hydrogen):
    C = orthonormalize(np.ones((1, 1)), hydrogen.tables.S)
    orbitals = OrbitalSet.from_coefficients(C)
    parts = energy_components(orbitals, hydrogen.tables)
    assert parts.coulomb + parts.exchange == pytest.approx(0.0, abs=1e-15)
    assert hf_energy(orbitals, hydrogen.tables) == pytest.approx(float(C[:, 0] @ hydrogen.tables.hcore @ C[:, 0]))


def test_one_electron_energy_is_core_expectation():
    molecule, basis, _ = load_input("he_two_primitive.json")
    tables = compute_tables(molecule, basis)
    rng = np.random.default_rng(13)
    hcore = tables.hcore
    for _ in range(20):
        c = orthonormalize(rng.standard_normal((tables.n_functions, 1)), tables.S)
        energy = hf_energy(OrbitalSet.from_coefficients(c), tables)
        assert abs(energy - float(c[:, 0] @ hcore @ c[:, 0])) <= 1e-13 * max(1.0, abs(energy))


def test_pair_operators_sum_to_fock_pieces(helium, random_orbitals):
    C = random_orbitals.C
    fock = build_fock(density_matrix(random_orbitals), helium.tables)
    J = sum(pair_potential_matrix(C[:, i], C[:, i], helium.tables) for i in range(2))
    K = sum(exchange_pair_matrix(C[:, i], C[:, i], helium.tables) for i in range(2))
    np.testing.assert_allclose(J, fock.Jmat, atol=1e-12)
    np.testing.assert_allclose(K, fock.Kmat, atol=1e-12)
    np.testing.assert_allclose(fock.F, helium.tables.hcore + fock.Jmat - fock.Kmat, atol=1e-12)


def test_self_pair_annihilates_own_orbital(helium, random_orbitals):
    c = random_orbitals.C[:, 0]
    difference = pair_potential_matrix(c, c, helium.tables) - exchange_pair_matrix(c, c, helium.tables)
    assert np.linalg.norm(difference @ c) < 1e-12


def test_build_fock_rejects_asymmetric_density(helium):
    n = helium.tables.n_functions
    D = np.zeros((n, n))
    D[0, 1] = 1.0
    with pytest.raises(ValueError, match="symmetric"):
        build_fock(D, helium.tables)


def test_bivariate_energy_on_the_diagonal(helium, random_orbitals):
    doubled = 2.0 * hf_energy(random_orbitals, helium.tables)
    assert bivariate_energy(random_orbitals, random_orbitals, helium.tables) == pytest.approx(doubled, abs=1e-12)


def test_bivariate_energy_is_symmetric(helium, random_orbitals):
    rng = np.random.default_rng(11)
    other = OrbitalSet.from_coefficients(orthonormalize(rng.standard_normal(random_orbitals.C.shape), helium.tables.S))
    forward = bivariate_energy(random_orbitals, other, helium.tables)
    backward = bivariate_energy(other, random_orbitals, helium.tables)
    assert forward == pytest.approx(backward, abs=1e-12)


def test_lagrangian_on_the_constraint_set(helium, random_orbitals):
    orbitals = random_orbitals.with_energies([-1.0, -0.1])
    point = lagrangian(orbitals, helium.tables)
    assert point.value == pytest.approx(hf_energy(orbitals, helium.tables), abs=1e-12)
    np.testing.assert_allclose(point.constraint_gradient, 0.0, atol=1e-12)
    W, de = point.gradient
    assert W.shape == orbitals.C.shape and de.shape == (2,)


def test_lagrangian_gradient_matches_finite_differences(helium, random_orbitals):
    orbitals = random_orbitals.with_energies([-0.9, -0.2])
    point = lagrangian(orbitals, helium.tables)
    rng = np.random.default_rng(5)
    direction = rng.standard_normal(orbitals.C.shape)
    step = 1e-6
    plus = lagrangian(OrbitalSet(orbitals.C + step * direction, orbitals.e), helium.tables).value
    minus = lagrangian(OrbitalSet(orbitals.C - step * direction, orbitals.e), helium.tables).value
    # df/dc_i = 2 (F - e_i S) c_i
    assert (plus - minus) / (2.0 * step) == pytest.approx(2.0 * np.sum(point.orbital_gradient * direction),
                                                          rel=1e-7)


def test_pairing_weights_orbital_block_twice():
    W = np.arange(6.0).reshape(3, 2)
    de = np.array([1.0, -2.0])
    assert pairing((W, de), (W, de)) == pytest.approx(2.0 * 55.0 + 5.0)
    assert pairing((W, de), (np.zeros_like(W), de)) == pytest.approx(5.0)


def test_canonicalize_diagonalizes_occupied_fock(helium, random_orbitals):
    canonical = canonicalize(random_orbitals, helium.tables)
    fock = build_fock(density_matrix(random_orbitals), helium.tables)
    projected = canonical.C.T @ fock.F @ canonical.C
    np.testing.assert_allclose(projected, np.diag(canonical.e), atol=1e-12)
    assert np.all(np.diff(canonical.e) >= 0.0)
    np.testing.assert_allclose(density_matrix(canonical), density_matrix(random_orbitals), atol=1e-12)


def test_fix_signs_makes_largest_entry_positive():
    C = np.array([[0.1, 3.0], [-2.0, -0.5]])
    fixed = fix_signs(C)
    np.testing.assert_array_equal(fixed, [[-0.1, 3.0], [2.0, -0.5]])


def test_orbital_set_serialization(random_orbitals):
    data = random_orbitals.to_dict()
    assert len(data["coefficients"]) == random_orbitals.n_basis
    assert data["orbital_energies"] == [0.0, 0.0]


def test_fock_eigenproblem_at_core_guess(hydrogen):
    levels, vectors = linalg.eigh(hydrogen.tables.hcore, hydrogen.tables.S)
    orbitals = OrbitalSet(vectors[:, :1], levels[:1])
    assert hf_energy(orbitals, hydrogen.tables) == pytest.approx(levels[0], rel=1e-13)
