import math
from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest

from oracles import L0_N1E4, LHAT0_N1E4
from rilab.errors import PreconditionError
from rilab.excursions import (count_excursions, excursion_segments, occupancy_check, scales,
                              smallest_eps_hat, toy_scales)
from rilab.lattice import DiscreteBox
from rilab.potential import equilibrium
from rilab.sampler import InterlacementEnsemble, prepare_window, sample_ensembles


def test_large_scale_arithmetic():
    s = scales(10**4, 0.1, K=100)
    assert s.L0 == L0_N1E4 and s.Lhat0 == LHAT0_N1E4
    assert s.K_bar == 203
    assert s.nested()


def test_scales_against_arbitrary_precision(rng):
    mp.mp.dps = 50
    for _ in range(30):
        N = int(rng.integers(3, 10**6))
        gamma = float(rng.choice([0.05, 0.1, 0.25, 0.5, 1.0]))
        s = scales(N, gamma)
        g = mp.mpf(Fraction(str(gamma)).numerator) / Fraction(str(gamma)).denominator
        assert s.L0 == int(mp.floor(mp.sqrt(g * N * mp.log(N))))
        assert s.Lhat0 == 300 * int(mp.floor(mp.sqrt(g) * N))


def test_scale_ratio_increases():
    r = [scales(N, 0.1).Lhat0 / scales(N, 0.1).L0 for N in (10**3, 10**4, 10**5, 10**6)]
    assert np.all(np.diff(r) > 0)


def test_scale_errors():
    with pytest.raises(PreconditionError):
        scales(100, 0.1, K=50)
    with pytest.raises(PreconditionError):
        scales(100, 1.5)
    with pytest.raises(PreconditionError):
        scales(2, 0.01)
    with pytest.raises(PreconditionError):
        toy_scales(2, 4)


@pytest.fixture(scope="module")
def toy():
    s = toy_scales(1, 5)
    win = prepare_window(s.U(np.zeros(3, np.int64)).points())
    return s, win


def _ensemble(win, paths, jumps):
    idx = win.index()
    outer = {tuple(p): k for k, p in enumerate(win.outer)}
    sites, jf, ptr = [], [], [0]
    for path, jmp in zip(paths, jumps):
        for p in path:
            j = idx.lookup([p])[0]
            sites.append(j if j >= 0 else -2 - outer[tuple(p)])
        jf += [k in jmp for k in range(len(path))]
        ptr.append(len(sites))
    n = len(paths)
    return InterlacementEnsemble(window=win, u_max=1.0, labels=np.full(n, 0.5), starts=np.zeros(n, np.int64),
                                 traj_ptr=np.array(ptr), sites=np.array(sites, np.int64),
                                 holds=np.ones(len(sites)), jump=np.array(jf), ens_ptr=np.array([0, n]),
                                 seed=0)


def _line(a, b):
    step = 1 if b >= a else -1
    return [(x, 0, 0) for x in range(a, b + step, step)]


def test_synthetic_single_excursion(toy):
    s, win = toy
    ens = _ensemble(win, [_line(-4, 4)], [set()])
    rec = count_excursions(ens, 0.5, np.zeros(3, np.int64), s)
    assert rec.count == 1
    assert rec.entries == [(0, 1)] and rec.exits == [(0, 8)]


def test_synthetic_two_excursions(toy):
    s, win = toy
    path = _line(-4, 4) + _line(-4, -5)[::-1][::-1]
    # re-enter at (-4, 0, 0), go in to D and back out through (-5, 0, 0)
    path = _line(-4, 4) + [(-4, 0, 0), (-3, 0, 0), (-4, 0, 0), (-5, 0, 0)]
    ens = _ensemble(win, [path], [{9}])
    rec = count_excursions(ens, 0.5, np.zeros(3, np.int64), s)
    assert rec.count == 2
    assert rec.local_time <= rec.occupation_D


def test_label_filter(toy):
    s, win = toy
    ens = _ensemble(win, [_line(-4, 4)], [set()])
    ens.labels[:] = 0.9
    assert count_excursions(ens, 0.5, np.zeros(3, np.int64), s).count == 0


def _stack_machine(in_D, out_U):
    count, state, entries = 0, "idle", []
    for t, (a, b) in enumerate(zip(in_D, out_U)):
        if state == "idle" and a:
            state = "open"
            entries.append(t)
            count += 1
        elif state == "open" and b:
            state = "idle"
    return count, entries


def test_random_ensemble_against_stack_machine(toy):
    s, win = toy
    ens = sample_ensembles(win, 2.0, 1, seed=9)
    z = np.zeros(3, np.int64)
    D, U = s.D(z), s.U(z)
    counts = []
    for u in (0.5, 1.0, 2.0):
        rec = count_excursions(ens, u, z, s)
        total, entries = 0, []
        for i in np.flatnonzero(ens.labels <= u):
            t = ens.trajectory(i)
            c, e = _stack_machine(D.contains(t.sites), ~U.contains(t.sites))
            total += c
            entries += [(int(i), k) for k in e]
        assert rec.count == total
        assert rec.entries == entries
        assert rec.local_time <= rec.occupation_D + 1e-9
        counts.append(rec.count)
    assert counts == sorted(counts)


def test_segments_edge_cases():
    assert excursion_segments(np.zeros(5, bool), np.zeros(5, bool)) == []
    in_D = np.array([0, 1, 1, 0, 0], bool)
    assert excursion_segments(in_D, np.zeros(5, bool)) == [(1, 4)]


def test_window_must_contain_U():
    s = toy_scales(1, 5)
    small = prepare_window(DiscreteBox((-3, -3, -3), 7).points())
    ens = sample_ensembles(small, 1.0, 1, seed=1)
    with pytest.raises(PreconditionError):
        count_excursions(ens, 1.0, np.zeros(3, np.int64), s)


def test_occupancy_check_cases():
    D = DiscreteBox((0, 0, 0), 3)
    t = equilibrium(D.points())
    pts = D.points()
    zero = occupancy_check(np.zeros(len(pts)), pts, 0.5, t)
    assert not zero["passed"]
    flat = occupancy_check(np.full(len(pts), 0.5), pts, 0.5, t)
    assert flat["margin"] == pytest.approx(0.0, abs=1e-12)
    assert occupancy_check(np.full(len(pts), 0.5), pts, 0.5, t, eps_hat=0.1)["passed"]


def test_smallest_eps_hat():
    one = smallest_eps_hat(np.zeros((1, 3), np.int64), 3)
    assert one["eps_hat"] == pytest.approx(0.0, abs=1e-12)
    two = smallest_eps_hat(np.array([[0, 0, 0], [12, 0, 0]]), 3)
    far = smallest_eps_hat(np.array([[0, 0, 0], [48, 0, 0]]), 3)
    assert 0 < far["eps_hat"] < two["eps_hat"]
