import io
import math

import numpy as np
import pytest

from kirchhofflab.ground_state import (
    BracketNotFound,
    KirchhoffParams,
    ShotKind,
    build_ground_state,
    classify_shot,
    energy_constants,
    equation_residual,
    read_profile,
    refine_profile,
    scaling_constant,
    solve_classical,
    write_profile,
)
from kirchhofflab.radial import RadialGrid


def test_params_validation():
    with pytest.raises(ValueError):
        KirchhoffParams(0.0, 1.0, 3.0)
    with pytest.raises(ValueError):
        KirchhoffParams(1.0, -0.1, 3.0)
    with pytest.raises(ValueError):
        KirchhoffParams(1.0, 1.0, 5.0)
    KirchhoffParams(1.0, 0.0, 3.0)  # classical limit admitted


def test_classify_shot_undershoot_and_crossing():
    assert classify_shot(3.0, 0.5).kind is ShotKind.NO_DECAY
    assert classify_shot(3.0, 10.0).kind is ShotKind.CROSSING


def test_classify_shot_decaying_at_bisected_value(profile_p3):
    res = classify_shot(3.0, profile_p3.central_value)
    assert res.kind is ShotKind.DECAYING
    assert res.q is not None and np.all(res.q > 0.0)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.0])
def test_profile_identities(profiles, p):
    prof = profiles[p]
    assert prof.nehari_defect < 1e-6
    assert prof.virial_ratio_defect < 1e-5


@pytest.mark.parametrize("p,ratio", [(2.0, 1.0), (3.0, 3.0), (4.0, 9.0)])
def test_virial_ratio_values(profiles, p, ratio):
    prof = profiles[p]
    assert abs(prof.K / prof.M - ratio) / ratio < 1e-5


def test_profile_positive_decreasing(profile_p3):
    v = profile_p3.Q.values
    assert np.all(v > 0.0)
    assert np.all(np.diff(v) < 0.0)


def test_uniqueness_from_different_brackets():
    """Manual bisection with classify_shot from two coarse brackets must
    land on the same central value."""

    def bisect(lo, hi, tol=1e-10):
        assert classify_shot(3.0, lo).kind is ShotKind.NO_DECAY
        assert classify_shot(3.0, hi).kind is ShotKind.CROSSING
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if classify_shot(3.0, mid).kind is ShotKind.CROSSING:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)

    q_a = bisect(4.0, 5.0)
    q_b = bisect(3.5, 6.5)
    assert abs(q_a - q_b) < 1e-9


def test_bracket_not_found_for_tight_range():
    grid = RadialGrid(np.linspace(0.0, 40.0, 4001))
    # p extremely close to 1 pushes the crossing far beyond the probe range
    with pytest.raises((BracketNotFound, RuntimeError)):
        solve_classical(1.01, grid=grid)


def test_scaling_constant_classical_limit():
    assert scaling_constant(KirchhoffParams(1.0, 0.0, 3.0), 10.0) == pytest.approx(1.0, abs=1e-12)
    assert scaling_constant(KirchhoffParams(4.0, 0.0, 3.0), 10.0) == pytest.approx(4.0, abs=1e-12)


def test_scaling_constant_fixed_point_oracle(profile_p3):
    K = profile_p3.K
    params = KirchhoffParams(1.0, 1.0, 3.0)
    c = scaling_constant(params, K)
    # independent scalar fixed-point iteration on c = a + b K sqrt(c)
    c_fp = 1.0
    for _ in range(200):
        c_fp = params.a + params.b * K * math.sqrt(c_fp)
    assert abs(c - c_fp) < 1e-12 * c


@pytest.mark.parametrize("a,b", [(0.5, 0.0), (1.0, 0.5), (2.0, 1.0), (4.0, 2.0)])
def test_scaling_formula_consistency(profile_p3, a, b):
    params = KirchhoffParams(a, b, 3.0)
    c = scaling_constant(params, profile_p3.K)
    sqrt_c = math.sqrt(c)
    target = 0.5 * (b * profile_p3.K + math.sqrt(b**2 * profile_p3.K**2 + 4.0 * a))
    assert abs(sqrt_c - target) < 1e-12


def test_build_classical_limit_is_identity(gs_classical, profile_p3):
    assert gs_classical.c == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(gs_classical.U.values, profile_p3.Q.values)


def test_build_scaling_laws(gs_kirchhoff, profile_p3):
    c = gs_kirchhoff.c
    assert abs(gs_kirchhoff.K_U - math.sqrt(c) * profile_p3.K) < 1e-6 * gs_kirchhoff.K_U
    assert abs(gs_kirchhoff.M_U - c**1.5 * profile_p3.M) < 1e-6 * gs_kirchhoff.M_U
    assert abs(gs_kirchhoff.P_U - c**1.5 * profile_p3.P) < 1e-6 * gs_kirchhoff.P_U


def test_build_self_consistency(gs_kirchhoff, gs_p2):
    for gs in (gs_kirchhoff, gs_p2):
        assert gs.self_consistency_defect < 1e-8
        assert gs.scaling_defect < 1e-12


def test_equation_residual_small(gs_kirchhoff, gs_p2, gs_classical):
    for gs in (gs_kirchhoff, gs_p2, gs_classical):
        assert gs.residual_sup < 1e-6


def test_residual_second_order_refinement(profile_p3):
    """The production stencil's residual is pure truncation error: O(h^2)."""
    params = KirchhoffParams(1.0, 0.0, 3.0)
    gs = build_ground_state(params, profile=profile_p3)
    res_coarse = np.max(np.abs(equation_residual(gs, order=2)))
    fine = refine_profile(profile_p3, 2)
    gs_fine = build_ground_state(params, profile=fine)
    res_fine = np.max(np.abs(equation_residual(gs_fine, order=2)))
    assert res_coarse / res_fine > 3.5


def test_monotone_decreasing_ground_state(gs_kirchhoff):
    assert np.all(np.diff(gs_kirchhoff.U.values) < 0.0)


def test_energy_constants(gs_classical, gs_kirchhoff):
    # b = 0: Nehari turns A into P (p-1) / (2 (p+1))
    A, B, m = energy_constants(gs_classical)
    p = 3.0
    target = gs_classical.P_U * (p - 1.0) / (2.0 * (p + 1.0))
    assert abs(A - target) / target < 1e-6
    assert m == A and A > 0.0
    # any parameters: B is half the mass
    assert B == pytest.approx(0.5 * gs_classical.M_U)
    assert energy_constants(gs_kirchhoff)[1] == pytest.approx(0.5 * gs_kirchhoff.M_U)


def test_ground_energy_positive(profiles):
    for p, prof in profiles.items():
        gs = build_ground_state(KirchhoffParams(1.0, 1.0, p), profile=prof)
        assert gs.m > 0.0


def test_profile_export_roundtrip(gs_kirchhoff, tmp_path):
    buf = io.StringIO()
    header = {"a": 1.0, "b": 1.0, "p": 3.0, "c": gs_kirchhoff.c,
              "Q0": gs_kirchhoff.profile.central_value}
    write_profile(gs_kirchhoff.U, header, buf)
    buf.seek(0)
    fn, meta = read_profile(buf)
    assert meta["c"] == pytest.approx(gs_kirchhoff.c)
    assert np.allclose(fn.values, gs_kirchhoff.U.values)
    assert np.allclose(fn.grid.nodes, gs_kirchhoff.U.grid.nodes)
