import numpy as np
import pytest

from oracles import CAP_EDGE, CAP_ORIGIN
from rilab.lattice import DiscreteBox, grid_points
from rilab.potential import apply_G, capacity, dirichlet_form, equilibrium, potential_energy


def test_single_point_and_pair():
    assert capacity([[0, 0, 0]]) == pytest.approx(CAP_ORIGIN, abs=1e-10)
    t = equilibrium([[0, 0, 0], [1, 0, 0]])
    assert t.cap == pytest.approx(CAP_EDGE, abs=1e-10)
    assert t.e[0] == pytest.approx(t.e[1], abs=1e-14)


def test_apply_G_single_charge():
    x = np.array([[0, 0, 0], [2, 1, 0]])
    out = apply_G(([[0, 0, 0]], [1.0]), 1.0, x)
    assert out[0] == pytest.approx(1.5163860591519780, abs=1e-9)
    assert np.all(apply_G((np.zeros((0, 3)), np.zeros(0)), 1.0, x) == 0)


def test_unit_charge_potential_has_sup_at_origin():
    t = equilibrium([[0, 0, 0]])
    h = t.h(grid_points([-3, -3, -3], [3, 3, 3]))
    assert h.max() == pytest.approx(1.0)


def test_equilibrium_identity_on_random_sets(rng):
    for _ in range(10):
        n = rng.integers(2, 65)
        K = np.unique(rng.integers(-4, 5, size=(n, 3)), axis=0)
        t = equilibrium(K, backend="exact")
        sup = t.support
        res = apply_G((t.K[sup], t.e[sup]), 1.0, t.K, t.gf) - 1.0
        assert np.max(np.abs(res)) <= 1e-10
        assert np.all(t.e >= 0) and np.all(t.e <= 1)
        assert t.h(t.K) == pytest.approx(np.ones(len(t.K)))


def test_capacity_monotone_on_nested_boxes():
    caps = [capacity(DiscreteBox((0, 0, 0), s).points()) for s in (1, 2, 3, 5, 8)]
    assert np.all(np.diff(caps) > 0)


def test_cube_symmetric_solve_matches_cholesky():
    pts = DiscreteBox((0, 0, 0), 12).points()
    a = equilibrium(pts, symmetric=True)
    b = equilibrium(pts, symmetric=False)
    assert a.info["method"] == "cube-symmetric"
    assert a.cap == pytest.approx(b.cap, rel=1e-10)


def test_exact_and_monte_carlo_agree(rng):
    for k in range(10):
        K = np.unique(rng.integers(-2, 3, size=(rng.integers(2, 12), 3)), axis=0)
        ex = equilibrium(K, backend="exact")
        mc = equilibrium(K, backend="monte-carlo", n_walks=4000, seed=k)
        se = float(np.sqrt(np.sum(mc.stderr**2)))
        assert abs(ex.cap - mc.cap) <= 4 * se + mc.bias_bound


def test_dirichlet_form_values():
    assert dirichlet_form({(0, 0, 0): 1.0}) == pytest.approx(1.0)
    f = {tuple(p): 2.0 for p in grid_points([0, 0, 0], [1, 1, 1])}
    g = {tuple(p): 1.0 for p in grid_points([0, 0, 0], [1, 1, 1])}
    # bilinearity against the diagonal
    assert dirichlet_form(f, g) == pytest.approx(2 * dirichlet_form(g))
    assert dirichlet_form(f) >= 0


def test_energy_of_capacitary_potential():
    K = DiscreteBox((0, 0, 0), 3).points()
    t = equilibrium(K)
    sup = t.support
    en = potential_energy((t.K[sup], t.e[sup]))
    assert en["window"] == pytest.approx(t.cap, rel=1e-4)
    assert en["pairing"] == pytest.approx(t.cap, rel=1e-10)
