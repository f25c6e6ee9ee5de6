import numpy as np
import pytest

from core.analysis.spectra import (SWEEP_FACTORS, CertificationError, PerturbationW, antisymmetrized_pair_form,
                                   assemble_hessian, directional_derivative_check, epsilon_sweep,
                                   finite_difference_jacobian, hessian_symmetry_residual, lm_certificate,
                                   numerical_rank, rq_identity_check, rs_positivity_check, spectral_split)
from core.hf.hfcore import OrbitalSet, orthonormalize
from core.hf.scf import CriticalPoint, random_generator


@pytest.fixture(scope="module")
def helium_blocks(helium, helium_cp):
    return assemble_hessian(helium_cp, helium.tables)


def test_rs_positivity_at_critical_point(helium, helium_cp):
    result = rs_positivity_check(helium_cp, helium.tables)
    assert result.passed
    assert result.self_annihilation <= 1e-10
    assert len(result.per_orbital_min) == 2
    assert result.to_dict()["passed"] is True


def test_rs_positivity_for_arbitrary_orbitals(helium):
    rng = random_generator((2, 2))
    for _ in range(100):
        C = orthonormalize(rng.standard_normal((helium.tables.n_functions, 2)), helium.tables.S)
        result = rs_positivity_check(OrbitalSet.from_coefficients(C), helium.tables)
        assert result.min_eigenvalue >= -1e-10


def test_rq_identity(helium, helium_cp):
    rng = random_generator((0, 3))
    for _ in range(100):
        W = PerturbationW.random(helium.tables.n_functions, 2, rng)
        result = rq_identity_check(helium_cp, W, helium.tables)
        assert result.discrepancy <= 1e-10
        assert result.passed


def test_rq_identity_vanishes_for_one_orbital(hydrogen, hydrogen_cp):
    W = PerturbationW(np.ones((1, 1)), [0.3])
    result = rq_identity_check(hydrogen_cp, W, hydrogen.tables)
    assert (result.lhs, result.rhs) == (0.0, 0.0)
    assert result.pair_integral == 0.0


def test_rq_identity_rejects_wrong_shape(helium, helium_cp):
    with pytest.raises(ValueError, match="does not match"):
        rq_identity_check(helium_cp, PerturbationW.zeros(3, 2), helium.tables)


def test_antisymmetrized_pair_form(helium, helium_cp):
    c = helium_cp.orbitals.C[:, 0]
    w = helium_cp.orbitals.C[:, 1]
    assert antisymmetrized_pair_form(w, c, helium.tables) > 0.0
    assert antisymmetrized_pair_form(c, c, helium.tables) == pytest.approx(0.0, abs=1e-12)


def test_spectral_split(helium, helium_cp):
    e = helium_cp.orbitals.e
    epsilon = float(np.min(-e))
    split = spectral_split(helium.tables, epsilon, e)
    n = helium.tables.n_functions
    assert split.H1.shape == split.H2.shape == (2 * n, 2 * n)
    assert split.projector_rank == int(np.sum(split.h_eigenvalues <= -0.5 * epsilon))
    assert split.projector_rank >= 1
    assert numerical_rank(split.H2) == 2 * split.projector_rank
    for bad in (0.0, -0.1):
        with pytest.raises(ValueError, match="positive"):
            spectral_split(helium.tables, bad, e)


def test_blocks_reassemble(helium_blocks):
    np.testing.assert_allclose(helium_blocks.H1 + helium_blocks.H2, helium_blocks.Hcal, atol=1e-12)
    np.testing.assert_allclose(helium_blocks.L + helium_blocks.M, helium_blocks.Fprime, atol=1e-12)
    assert hessian_symmetry_residual(helium_blocks) <= 1e-10


def test_certificate_at_smallest_ionization_energy(helium_blocks):
    certificate = lm_certificate(helium_blocks)
    assert certificate.epsilon == pytest.approx(certificate.epsilon_star)
    assert certificate.target == pytest.approx(min(0.5 * certificate.epsilon_star, 1.0))
    assert certificate.rq_min_eigenvalue >= -1e-10
    assert certificate.l_certified
    assert certificate.h2_rank_ok
    assert certificate.passed
    data = certificate.to_dict()
    assert "M_within_bound" not in data
    assert data["M_constituent_rank_sum_info"] == certificate.m_constituent_rank_sum
    assert data["eps_half"] == pytest.approx(0.5 * certificate.epsilon)
    assert data["ranks"]["N"] == 2


def test_epsilon_sweep(helium, helium_cp):
    certificates = epsilon_sweep(helium_cp, helium.tables)
    epsilon_star = float(np.min(-helium_cp.orbitals.e))
    assert [c.epsilon for c in certificates] == pytest.approx([f * epsilon_star for f in SWEEP_FACTORS])
    assert all(c.passed for c in certificates)


def test_hydrogen_certificate(hydrogen, hydrogen_cp):
    blocks = assemble_hessian(hydrogen_cp, hydrogen.tables)
    certificate = lm_certificate(blocks)
    assert certificate.ranks["Scal"] == 0
    assert certificate.passed


def test_directional_derivatives(helium, helium_cp, helium_blocks):
    check = directional_derivative_check(helium_cp, helium.tables, helium_blocks, n_directions=20, seed=1)
    assert check.passed
    assert check.max_relative_error <= 1e-6
    assert len(check.errors) == 20
    assert check.to_dict()["n_directions"] == 20


def test_finite_difference_jacobian_matches_fprime(helium, helium_cp, helium_blocks):
    jacobian = finite_difference_jacobian(helium_cp, helium.tables)
    scale = float(np.max(np.abs(helium_blocks.Fprime)))
    np.testing.assert_allclose(jacobian, helium_blocks.Fprime, rtol=0.0, atol=1e-6 * scale)


def test_uncertified_point_is_refused(helium, helium_cp):
    uncertified = CriticalPoint(helium_cp.orbitals, helium_cp.energy, 1.0, 0.0, False)
    with pytest.raises(CertificationError):
        assemble_hessian(uncertified, helium.tables)
    with pytest.raises(CertificationError):
        rq_identity_check(uncertified, PerturbationW.zeros(helium.tables.n_functions, 2), helium.tables)
    with pytest.raises(CertificationError):
        epsilon_sweep(uncertified, helium.tables)


def test_perturbation_validation():
    with pytest.raises(ValueError):
        PerturbationW(np.zeros((3, 2)), np.zeros(3))
    with pytest.raises(ValueError, match="finite"):
        PerturbationW(np.full((2, 1), np.inf), [0.0])
    W = PerturbationW([[1.0, 2.0], [3.0, 4.0]], [5.0, 6.0])
    np.testing.assert_array_equal(W.stacked(), [1.0, 3.0, 2.0, 4.0, 5.0, 6.0])
