import numpy as np
import pytest

from kirchhofflab.ground_state import build_ground_state, refine_profile
from kirchhofflab.spectral import (
    SectorIndex,
    build_sector,
    gradient_pairing,
    kernel_certificate,
    near_zero_threshold,
    radial_nondegeneracy,
    sector_spectrum,
    verify_au_identities,
)


def test_sector_index_table():
    assert SectorIndex(0).lambda_k == 0.0
    assert SectorIndex(1).lambda_k == 2.0
    assert SectorIndex(2).lambda_k == 6.0
    assert SectorIndex(0).multiplicity == 1
    assert SectorIndex(1).multiplicity == 3
    assert SectorIndex(2).multiplicity == 5


def test_sector_matrices_symmetric(gs_kirchhoff):
    op = build_sector(gs_kirchhoff, 0)
    assert op.has_rank_one
    # tridiagonal symmetric by construction; rank-one term is g g^T
    rng = np.random.default_rng(3)
    w = rng.standard_normal(op.diag.size)
    v = rng.standard_normal(op.diag.size)
    lhs = np.dot(v, op.matvec(w))
    rhs = np.dot(w, op.matvec(v))
    assert abs(lhs - rhs) < 1e-10 * max(abs(lhs), abs(rhs))


def test_rank_one_only_at_k0(gs_kirchhoff, gs_classical):
    assert build_sector(gs_kirchhoff, 0).has_rank_one
    for k in (1, 2, 3):
        assert not build_sector(gs_kirchhoff, k).has_rank_one
    # b = 0: the nonlocal term vanishes identically
    assert not build_sector(gs_classical, 0).has_rank_one


def test_diagonal_difference_between_sectors(gs_kirchhoff):
    """A_k - A_1 is the centrifugal increment c * (lambda_k - lambda_1)/r^2."""
    op1 = build_sector(gs_kirchhoff, 1)
    op2 = build_sector(gs_kirchhoff, 2)
    r = op1.radii
    expected = gs_kirchhoff.c * 4.0 / r**2
    assert np.allclose(op2.diag - op1.diag, expected, rtol=1e-12)
    assert np.array_equal(op1.offdiag, op2.offdiag)


def test_translation_mode_in_k1_kernel(gs_kirchhoff):
    op = build_sector(gs_kirchhoff, 1)
    w = op.radii * gs_kirchhoff.dU.values[1:-1]
    out = op.matvec(w)
    # normalized by the operator scale on the same vector
    scale = np.linalg.norm(op.diag * w)
    assert np.linalg.norm(out) / scale < 1e-4


def test_k0_applied_to_scaling_direction(gs_kirchhoff):
    """Without the rank-one term, A_u S = -2U with S = 2U/(p-1) + r U'."""
    gs = gs_kirchhoff
    op = build_sector(gs, 0)
    r = gs.U.grid.nodes[1:-1]
    u = gs.U.values[1:-1]
    du = gs.dU.values[1:-1]
    S = 2.0 * u / (gs.params.p - 1.0) + r * du
    w = r * S
    out = op.matvec(w) - op.rank_one_coeff * np.dot(op.rank_one_vec, w) * op.rank_one_vec
    target = -2.0 * u * r
    num = np.linalg.norm(out - target)
    den = np.linalg.norm(target)
    assert num / den < 5e-3  # second-order application
    fine = build_ground_state(gs.params, profile=refine_profile(gs.profile, 2))
    opf = build_sector(fine, 0)
    rf = fine.U.grid.nodes[1:-1]
    Sf = 2.0 * fine.U.values[1:-1] / (gs.params.p - 1.0) + rf * fine.dU.values[1:-1]
    wf = rf * Sf
    outf = opf.matvec(wf) - opf.rank_one_coeff * np.dot(opf.rank_one_vec, wf) * opf.rank_one_vec
    numf = np.linalg.norm(outf + 2.0 * fine.U.values[1:-1] * rf)
    denf = np.linalg.norm(2.0 * fine.U.values[1:-1] * rf)
    assert (num / den) / (numf / denf) > 3.5  # O(h^2)


@pytest.mark.parametrize("fixture", ["gs_classical", "gs_p2"])
def test_operator_identities(request, fixture):
    gs = request.getfixturevalue(fixture)
    rep = verify_au_identities(gs)
    assert rep.res_eigen < 1e-4
    assert rep.res_scaling < 1e-4
    assert rep.res_inverse < 1e-4


def test_identity_residuals_shrink_under_refinement(gs_classical):
    rep = verify_au_identities(gs_classical)
    fine = build_ground_state(
        gs_classical.params, profile=refine_profile(gs_classical.profile, 2)
    )
    rep_fine = verify_au_identities(fine)
    assert rep.res_scaling / rep_fine.res_scaling > 3.5
    assert rep.res_inverse / rep_fine.res_inverse > 3.5


def test_identity_sanity_anti_test(gs_kirchhoff):
    """Applied to the zero function the first identity residual equals the
    full right-hand side."""
    from kirchhofflab.spectral import _apply_au, _rel_l2

    gs = gs_kirchhoff
    zero = np.zeros_like(gs.U.values)
    rhs = (gs.params.p - 1.0) * gs.U.values**gs.params.p
    res = _apply_au(gs, zero) + rhs
    assert _rel_l2(gs, res, rhs) == pytest.approx(1.0)


def test_gradient_pairing_values(gs_classical, gs_kirchhoff, gs_p2):
    assert gradient_pairing(gs_classical) == pytest.approx(0.0, abs=1e-12)
    for gs in (gs_kirchhoff, gs_p2):
        target = (gs.c - gs.params.a) / (2.0 * gs.c)
        val = gradient_pairing(gs)
        assert abs(val - target) < 1e-5
        assert val < 0.5


def test_sector_spectrum_k1_kernel(gs_kirchhoff):
    op = build_sector(gs_kirchhoff, 1)
    vals, vecs = sector_spectrum(op, 3, return_vectors=True)
    assert abs(vals[0]) < 1e-3
    w_exact = op.radii * gs_kirchhoff.dU.values[1:-1]
    cos = abs(np.dot(vecs[:, 0], w_exact)) / (
        np.linalg.norm(vecs[:, 0]) * np.linalg.norm(w_exact)
    )
    assert cos > 0.999


def test_sector_spectrum_gap_and_ordering(gs_kirchhoff):
    lam1 = sector_spectrum(build_sector(gs_kirchhoff, 1), 1)[0]
    lam2 = sector_spectrum(build_sector(gs_kirchhoff, 2), 1)[0]
    lam3 = sector_spectrum(build_sector(gs_kirchhoff, 3), 1)[0]
    assert lam2 > 10.0 * abs(lam1)
    assert lam3 > lam2 - near_zero_threshold(gs_kirchhoff)
    vals = sector_spectrum(build_sector(gs_kirchhoff, 2), 5)
    assert np.all(np.diff(vals) >= 0.0)


def test_radial_nondegeneracy_positive_and_stable(gs_kirchhoff, gs_classical):
    for gs in (gs_kirchhoff, gs_classical):
        sig = radial_nondegeneracy(gs)
        assert sig > 0.0
        fine = build_ground_state(gs.params, profile=refine_profile(gs.profile, 2))
        sig_fine = radial_nondegeneracy(fine)
        assert abs(sig_fine - sig) <= 0.2 * sig


def test_anti_embedding_of_translation_mode(gs_kirchhoff):
    """U' fed to the k = 0 operator (centrifugal term absent) is NOT a
    kernel candidate: the missing barrier leaves a large residual.  The
    certificate must not be reproducible with the wrong sector."""
    gs = gs_kirchhoff
    op0 = build_sector(gs, 0)
    op1 = build_sector(gs, 1)
    w = op0.radii * gs.dU.values[1:-1]
    res0 = op0.matvec(w) - op0.rank_one_coeff * np.dot(op0.rank_one_vec, w) * op0.rank_one_vec
    res1 = op1.matvec(w)
    # the k=1 application annihilates U', the k=0 one does not come close
    assert np.linalg.norm(res0) > 100.0 * np.linalg.norm(res1)


def test_kernel_certificate(gs_kirchhoff):
    cert = kernel_certificate(gs_kirchhoff, refine=False)
    assert cert.kernel_sectors == [1]
    assert cert.kernel_multiplicity == 3
    assert cert.translation_cosine > 0.999
    assert cert.sigma_min_radial > 0.0
    doc = cert.to_json()
    assert '"sectors"' in doc and '"passed"' in doc
