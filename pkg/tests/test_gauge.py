import math

import numpy as np
import pytest

from oracles import G0_D3, LAPLACE_U05_S03
from rilab.errors import InadmissiblePotential, PreconditionError
from rilab.gauge import (Potential, corollary32_bound, dirichlet_identity, gauge, gauge_series,
                         laplace_functional, laplace_mc, random_admissible_pair, remainder,
                         remainder_series, remarkable_case, resolvent_norm, verify_lemma31)
from rilab.lattice import DiscreteBox, grid_points

O = np.zeros((1, 3), dtype=np.int64)


def test_single_site_gauge_closed_form():
    s = 0.3
    res = gauge((O, [s]))
    assert res.gamma_support[0] == pytest.approx(1 / (1 - s * G0_D3), rel=1e-12)
    assert laplace_functional((O, [s]), 0.5) == pytest.approx(LAPLACE_U05_S03, rel=1e-12)


def test_gauge_series_route(rng):
    V, _ = random_admissible_pair(rng, side=3)
    assert np.allclose(gauge_series(V), gauge(V).gamma_support, atol=1e-12)


def test_gauge_off_support_satisfies_equation(rng):
    V, _ = random_admissible_pair(rng, side=2)
    x = grid_points([-2, -2, -2], [3, 3, 3])
    res = gauge(V, window=x)
    direct = 1 + V.gf.matrix(x, V.points) @ (V.values * res.gamma_support)
    assert np.allclose(res.gamma_window, direct)


def test_inadmissible_potentials():
    with pytest.raises(InadmissiblePotential):
        gauge((O, [1.0 / G0_D3]))
    with pytest.raises(InadmissiblePotential):
        gauge((O, [0.9995 / G0_D3]))


def test_norm_of_scaled_equilibrium_measure():
    a = 0.4
    V = Potential.make((O, [a / G0_D3]))
    assert V.norm() == pytest.approx(a, rel=1e-12)
    b = 0.1
    # (1 - b g0)^{-1} g0 (a / g0) on the single site
    assert resolvent_norm(Potential.make((O, [b])), V) == pytest.approx(a / (1 - b * G0_D3), rel=1e-12)


def test_perturbation_identities_on_random_pairs(rng):
    for _ in range(20):
        V, Vp = random_admissible_pair(rng, side=3)
        r = verify_lemma31(V, Vp)
        assert r["residual_1"] <= 1e-10
        assert r["residual_2"] <= 1e-10
        assert r["third_checked"]
        assert r["residual_3"] <= 1e-10


def test_remarkable_case():
    C = DiscreteBox((0, 0, 0), 2).points()
    res = remarkable_case(C, 0.3, window=grid_points([-3, -3, -3], [4, 4, 4]))
    assert res["gamma_residual"] <= 1e-10
    assert res["identity_residual"] <= 1e-10
    assert res["dirichlet_rel_error"] <= 1e-4
    assert res["dirichlet_pairing"] == pytest.approx(res["dirichlet_predicted"], rel=1e-10)
    with pytest.raises(PreconditionError):
        remarkable_case(C, 1.0)


def test_dirichlet_identity_signed(rng):
    V, _ = random_admissible_pair(rng, side=3)
    res = dirichlet_identity(V)
    assert res["residual"] <= 1e-10
    assert res["dirichlet"] == pytest.approx(res["pairing_route"], rel=1e-10)


def test_remainder_is_quadratic_and_dominates_series():
    V = (O, [0.4 / G0_D3])
    eta = (O, [1.0])
    r1, r2 = remainder(0.02, eta, V), remainder(0.01, eta, V)
    assert r2 <= r1 / 3
    s = remainder_series(0.02, eta, V)
    assert abs(s["actual"]) <= s["bound"] + 1e-15
    assert s["bound"] == pytest.approx(r1, rel=1e-8)
    assert remainder(0.0, eta, V) == 0.0


def test_tail_bound_small_mc():
    V = (O, [0.4 / G0_D3])
    rep = corollary32_bound(V, (O, [1.0]), 0.05, 0.5, 0.3, n_mc=20000, seed=4)
    assert rep.passed
    assert 0 < rep.bound < 1
    assert rep.tail <= rep.bound


def test_laplace_mc_small():
    res = laplace_mc((O, [0.2]), 0.5, 20000, seed=2)
    assert abs(res["z"]) <= 4
    assert res["exact"] == pytest.approx(math.exp(0.5 * 0.2 / (1 - 0.2 * G0_D3)))
