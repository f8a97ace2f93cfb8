import math

import numpy as np
import pytest

from rilab.errors import PreconditionError
from rilab.lattice import grid_points
from rilab.metrics import (Mollifier, ScaledMeasure, closeness_constant, coarsen, coarsening_error,
                           d_bl, d_R, density_measure, discrete_convolution, distance_report,
                           mollified_family, random_atomic_measure, scaled_measure, verify_lemma44,
                           wasserstein1)

R = 2.0


def dirac(x, m=1.0):
    return ScaledMeasure(np.atleast_2d(np.asarray(x, float)), np.array([m]), R)


def test_w1_between_diracs():
    r = wasserstein1(dirac([0, 0, 0]), dirac([1, 1, 0]))
    assert r.value == pytest.approx(math.sqrt(2), abs=1e-9)
    assert r.gap <= 1e-9


def test_w1_split_mass():
    Q = ScaledMeasure(np.array([[1.0, 0, 0], [-1.0, 0, 0]]), np.array([0.5, 0.5]), R)
    r = wasserstein1(dirac([0, 0, 0]), Q)
    assert r.value == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(PreconditionError):
        wasserstein1(dirac([0, 0, 0], 2.0), Q)


def test_distance_cases():
    mu = dirac([0.5, 0, 0], 1.3)
    zero = ScaledMeasure.zero(3, R)
    assert d_R(mu, mu) == pytest.approx(0.0, abs=1e-12)
    assert d_bl(mu, mu).value == pytest.approx(0.0, abs=1e-12)
    assert d_R(zero, zero) == 0.0
    assert d_R(zero, mu) == math.inf
    assert distance_report(zero, mu).d_BL == pytest.approx(1.3)


def test_mass_gap_only():
    rep = verify_lemma44(dirac([0, 0, 0]), dirac([0, 0, 0], 2.0))
    assert rep["d_R"] == pytest.approx(1.0)
    assert rep["d_BL"] == pytest.approx(1.0)
    assert rep["lower"] == pytest.approx(0.5)
    assert rep["upper"] == pytest.approx(1 + 2 * math.sqrt(3) * R / 2)
    assert rep["holds"]


def test_density_doubling():
    N = 4
    lam = density_measure(lambda x: np.ones(len(x)), N, R, 3)
    two = density_measure(lambda x: 2 * np.ones(len(x)), N, R, 3)
    assert d_R(two, lam) == pytest.approx(lam.total, rel=1e-9)


def test_sandwich_on_random_pairs(rng):
    for _ in range(100):
        mu = random_atomic_measure(rng, R, mass_scale=rng.uniform(0.1, 3))
        nu = random_atomic_measure(rng, R, mass_scale=rng.uniform(0.1, 3))
        res = verify_lemma44(mu, nu)
        assert res["slack_lower"] >= -1e-7 and res["slack_upper"] >= -1e-7
        assert res["gap"] <= 1e-7


def test_triangle_inequality(rng):
    for _ in range(50):
        P, Q, S = (random_atomic_measure(rng, R).normalized() for _ in range(3))
        assert wasserstein1(P, S).value <= wasserstein1(P, Q).value + wasserstein1(Q, S).value + 1e-7


def test_scaled_measure_and_coverage():
    r = 4
    pts = grid_points([-r] * 3, [r] * 3)
    field = np.zeros(len(pts))
    mu = scaled_measure(field, pts, 2, R)
    assert mu.total == 0
    field[10] = 2.5
    mu = scaled_measure(field, pts, 2, R)
    assert mu.total == pytest.approx(2.5 / 8)
    assert np.allclose(mu.points[0], pts[10] / 2)
    with pytest.raises(PreconditionError):
        scaled_measure(field, pts, 3, R)


def test_coarsening_error_bound(rng):
    for _ in range(10):
        P, Q = (random_atomic_measure(rng, R, n_atoms=30).normalized() for _ in range(2))
        k = 4
        w = wasserstein1(P, Q).value
        wc = wasserstein1(coarsen(P, k).normalized(), coarsen(Q, k).normalized()).value
        assert abs(w - wc) <= coarsening_error(R, k, 3)
    assert coarsen(P, k).total == pytest.approx(P.total)


def test_mollifier_normalisation():
    for kind in ("bump-poly4", "bump-exp"):
        chi = Mollifier(kind)
        assert chi.radial_integral(0) == pytest.approx(1.0, abs=1e-8)
        f = mollified_family(chi, 0.5, 10, [5, 0, 0])
        assert f([[0.5, 0, 0]])[0] == pytest.approx(chi.sup / 0.5**3)
        assert f([[1.1, 0, 0]])[0] == 0.0
    with pytest.raises(PreconditionError):
        Mollifier("box")
    with pytest.raises(PreconditionError):
        Mollifier().scaled(1.0)


def test_convolution_of_constant_converges():
    x = np.zeros((1, 3))
    errs = [abs(discrete_convolution(lambda z: np.ones(len(z)), 0.3, N, R, x)[0] - 1.0) for N in (20, 40)]
    assert errs[1] < errs[0] < 1e-3


def test_closeness_constant_stable():
    chi = Mollifier()

    def eta(z):
        return np.clip(z[:, 0], -1, 1)

    c = [closeness_constant(eta, chi, [0.2, 0.4], N, R, n_query=40)["c_fit"] for N in (20, 40)]
    assert c[1] == pytest.approx(c[0], rel=0.25)
    assert c[0] <= chi.radial_integral(1) + 0.05
