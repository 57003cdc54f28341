import math

import numpy as np
import pytest

from fracblow.errors import NonConvergence
from fracblow.ground_state import (
    GroundState,
    compute_cgn,
    default_box,
    petviashvili_solve,
    residual,
    verify_identities,
)
from fracblow.spectral import Field, ModelParams, gn_ratio, make_grid, mass

from conftest import smooth_random


def quintic_soliton(x):
    return 3**0.25 / np.sqrt(np.cosh(2 * x))


def test_closed_form_soliton(gs_cubic_quintic):
    gs = gs_cubic_quintic
    x = gs.grid.axis
    assert gs.iterations <= 200
    assert np.max(np.abs(gs.q.values - quintic_soliton(x))) <= 1e-6


def test_residual_below_tolerance(gs06):
    assert gs06.residual_l2 <= 1e-8
    assert residual(gs06.q, gs06.params) == pytest.approx(gs06.residual_l2)


def test_q_real_positive_peaked_even(gs06):
    q = gs06.q.values
    assert gs06.q.is_real()
    assert np.all(q.real >= 0)
    assert np.argmax(q.real) == gs06.grid.n // 2
    mirrored = np.roll(q[::-1], 1)
    assert np.linalg.norm(q - mirrored) / np.linalg.norm(q) < 1e-8


def test_stabilizer_tends_to_one(gs06):
    assert abs(gs06.stabilizer - 1.0) < 10 * 1e-10


@pytest.mark.xfail(strict=True, reason="L=16 box inflates the mass by ~1.5e-3 through periodic tail images")
def test_mass_refinement_small_boxes():
    p = ModelParams.critical(1, 0.6)
    a = petviashvili_solve(p, make_grid(1, 256, 16.0)).mass_q
    b = petviashvili_solve(p, make_grid(1, 512, 32.0)).mass_q
    assert a == pytest.approx(b, rel=5e-4)


def test_mass_refinement_wide_boxes():
    p = ModelParams.critical(1, 0.6)
    a = petviashvili_solve(p, make_grid(1, 1024, 64.0)).mass_q
    b = petviashvili_solve(p, make_grid(1, 2048, 128.0)).mass_q
    assert a == pytest.approx(b, rel=5e-4)


def test_pairing_identity_on_exact_soliton():
    g = make_grid(1, 1024, 16.0)
    p = ModelParams.critical(1, 1.0)
    q = Field(g, quintic_soliton(g.axis))
    gs = GroundState(q=q, params=p, residual_l2=residual(q, p), c_gn=0.0, mass_q=mass(q),
                     iterations=0, stabilizer=1.0)
    gs.c_gn = compute_cgn(gs)
    rep = verify_identities(gs, tol=1e-8)
    assert rep.passed, rep.gaps()
    assert rep.elliptic_pairing_gap < 1e-10


def test_identities_report_populated_on_failure(gs06):
    rep = verify_identities(gs06, tol=1e-14)
    assert not rep.passed
    assert set(rep.gaps()) == {"energy", "pohozaev", "pairing", "gn_equality"}
    assert all(math.isfinite(v) for v in rep.gaps().values())
    assert rep.to_dict()["tol"] == 1e-14


def test_pohozaev_ratio_near_one(gs_cubic_quintic):
    assert gs_cubic_quintic.identities.pohozaev_ratio == pytest.approx(1.0, abs=1e-8)


def test_cgn_quintic_value(gs_cubic_quintic):
    # mass of 3^{1/4} sech^{1/2}(2x) is sqrt(3) pi / 2, so C_GN = 3 / mass^2 = 4 / pi^2
    assert gs_cubic_quintic.mass_q == pytest.approx(math.sqrt(3) * math.pi / 2, rel=1e-10)
    assert gs_cubic_quintic.c_gn == pytest.approx(4 / math.pi**2, rel=1e-9)


def test_cgn_refinement():
    p = ModelParams.critical(1, 1.0)
    a = petviashvili_solve(p, make_grid(1, 256, 16.0)).c_gn
    b = petviashvili_solve(p, make_grid(1, 512, 16.0)).c_gn
    assert a == pytest.approx(b, rel=1e-6)


def test_cgn_definition(gs06):
    p = gs06.params
    assert gs06.c_gn * gs06.mass_q ** (2 * p.s / p.d) == pytest.approx((2 * p.s + p.d) / p.d, rel=1e-14)


def test_gn_ratio_maximized_by_q(gs06, rng):
    p = gs06.params
    top = gn_ratio(gs06.q, p)
    for _ in range(20):
        f = smooth_random(gs06.grid, rng, modes=40)
        assert gn_ratio(f, p) <= top * (1 + 1e-6)


def test_two_dimensional_solve():
    gs = petviashvili_solve(ModelParams.critical(2, 0.9), make_grid(2, 64, 8.0))
    q = gs.q.values.real
    np.testing.assert_allclose(q, q.T, atol=1e-12)
    assert gs.identities.checks["pairing"]


def test_non_convergence():
    with pytest.raises(NonConvergence):
        petviashvili_solve(ModelParams.critical(1, 0.6), make_grid(1, 128, 16.0), max_iter=3)


def test_rejects_bad_init():
    g = make_grid(1, 64, 8.0)
    p = ModelParams.critical(1, 0.6)
    with pytest.raises(ValueError):
        petviashvili_solve(p, g, init=Field(g, -np.ones(64)))
    with pytest.raises(ValueError):
        petviashvili_solve(p, g, init=Field(g, np.zeros(64)))
    with pytest.raises(ValueError):
        petviashvili_solve(p, g, init=Field(make_grid(1, 32, 8.0), np.ones(32)))


def test_rejects_supercritical_alpha():
    with pytest.raises(ValueError):
        petviashvili_solve(ModelParams(2, 0.5, 5.0), make_grid(2, 16, 4.0))


def test_warm_start(gs06):
    again = petviashvili_solve(gs06.params, gs06.grid, init=gs06.q)
    assert again.iterations < 5
    np.testing.assert_allclose(again.q.values, gs06.q.values, atol=1e-9)


def test_default_box():
    assert default_box(0.6) == 16.0
    assert default_box(0.3) == 32.0
