"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math
import time

import networkx as nx
import numpy as np
import pytest
from scipy import stats

from oracles import C3, CAP_EDGE, CAP_ORIGIN, G0_D3, LAPLACE_U05_S03
from rilab.appendix import BoxUnionConfig, a_L_study, capacity_ratio_experiment
from rilab.disconnection import Experiment, check_disconnection_mask, estimate_disconnection_probability
from rilab.gauge import (corollary32_bound, dirichlet_identity, laplace_mc, random_admissible_pair, remainder,
                         remarkable_case, sampled_pairings, verify_lemma31)
from rilab.green import green
from rilab.lattice import Box, CompactSetSpec, DiscreteBox, blow_up, grid_points
from rilab.metrics import ScaledMeasure, random_atomic_measure, verify_lemma44, wasserstein1
from rilab.pipeline import profile_distance_pipeline
from rilab.potential import apply_G, capacity, equilibrium
from rilab.sampler import first_hit_levels, interlacement_mask, prepare_window, sample_ensembles

O = np.zeros((1, 3), dtype=np.int64)


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail, t0):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {k}: {detail} [{time.perf_counter() - t0:.1f}s]")
        assert ok, detail
    return emit


def test_criterion_01_green(report):
    t0 = time.perf_counter()
    g0 = green(3, [0, 0, 0])
    g1 = green(3, [1, 0, 0])
    r20 = green(3, [20, 0, 0]) * 20 / C3
    ok = abs(g0 - G0_D3) <= 1e-6 and abs(g1 - (g0 - 1)) <= 1e-9 and 0.98 <= r20 <= 1.02
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 60
    report(1, ok, f"g(0)={g0:.12f}, g(0)-g(e1)-1={g0 - g1 - 1:.1e}, g(x)|x|/C3={r20:.5f}", t0)


def test_criterion_02_capacity(report):
    t0 = time.perf_counter()
    c0 = capacity([[0, 0, 0]])
    c1 = capacity([[0, 0, 0], [1, 0, 0]])
    ok = abs(c0 - 1 / G0_D3) <= 1e-8 and abs(c1 - 2 / (2 * G0_D3 - 1)) <= 1e-8
    ok &= abs(c0 - CAP_ORIGIN) <= 1e-8 and abs(c1 - CAP_EDGE) <= 1e-8
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(10):
        n = int(rng.integers(2, 65))
        K = np.unique(rng.integers(-4, 5, size=(n, 3)), axis=0)
        t = equilibrium(K, backend="exact")
        sup = t.support
        worst = max(worst, float(np.max(np.abs(apply_G((t.K[sup], t.e[sup]), 1.0, t.K, t.gf) - 1.0))))
    ok &= worst <= 1e-10
    report(2, ok, f"cap{{0}}={c0:.12f}, cap{{0,e1}}={c1:.12f}, max |Ge_K - 1|={worst:.1e}", t0)


def test_criterion_03_gauge_identities(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    worst, third = 0.0, 0
    for _ in range(20):
        V, Vp = random_admissible_pair(rng, side=3)
        r = verify_lemma31(V, Vp)
        third += bool(r["third_checked"])
        worst = max(worst, r["residual_1"], r["residual_2"], r["residual_3"] or 0.0)
    ok = worst <= 1e-10 and third == 20
    report(3, ok, f"20 pairs on 3^3 supports, max residual {worst:.1e}, third identity on {third}/20", t0)


def test_criterion_04_dirichlet(report):
    t0 = time.perf_counter()
    C = DiscreteBox((0, 0, 0), 3).points()
    rc = remarkable_case(C, 0.5)
    rng = np.random.default_rng(404)
    di = max(dirichlet_identity(random_admissible_pair(rng, side=3)[0])["residual"] for _ in range(10))
    ok = (rc["gamma_residual"] <= 1e-10 and rc["identity_residual"] <= 1e-10 and di <= 1e-10
          and rc["dirichlet_rel_error"] <= 1e-4)
    report(4, ok, f"gamma {rc['gamma_residual']:.1e}, <V,g^2-g>=E(g-1) {max(rc['identity_residual'], di):.1e}, "
                  f"E vs (a/(1-a))^2 cap rel {rc['dirichlet_rel_error']:.1e}", t0)


def test_criterion_05_laplace(report):
    t0 = time.perf_counter()
    u, s, n = 0.5, 0.3, 100_000
    res = laplace_mc((O, [s]), u, n, seed=5)
    closed = math.exp(u * s / (1 - s * G0_D3))
    L = sampled_pairings((O, [1.0]), u, n, seed=55)
    z_mean = (L.mean() - u) / (L.std(ddof=1) / math.sqrt(n))
    ok = abs(res["exact"] - closed) <= 1e-12 and abs(closed - LAPLACE_U05_S03) <= 1e-12
    ok &= abs(res["z"]) <= 3 and abs(z_mean) <= 3
    report(5, ok, f"MGF {res['empirical']:.5f} vs {closed:.5f} (z={res['z']:+.2f}), "
                  f"E[L]={L.mean():.4f} (z={z_mean:+.2f})", t0)


def test_criterion_06_tail_bound(report):
    t0 = time.perf_counter()
    V = (O, np.array([0.4 / G0_D3]))
    eta = (O, np.array([1.0]))
    parts, ok = [], True
    for k, (delta, u, t) in enumerate([(0.05, 0.5, 0.1), (0.05, 0.5, 0.5), (0.02, 1.0, 0.3)]):
        rep = corollary32_bound(V, eta, delta, u, t, n_mc=20000, seed=60 + k)
        ok &= bool(rep.passed)
        parts.append(f"{rep.tail_lower_99:.4f}<={rep.bound:.4f}")
    r1, r2 = remainder(0.02, eta, V), remainder(0.01, eta, V)
    ok &= r2 <= r1 / 3
    report(6, ok, f"99% lower tail vs bound {', '.join(parts)}; R(0.01)/R(0.02)={r2 / r1:.3f}", t0)


def test_criterion_07_sampler(report):
    t0 = time.perf_counter()
    cube = prepare_window(DiscreteBox((-1, -1, -1), 3).points())
    u = 0.7
    c = sample_ensembles(cube, u, 4000, seed=71).counts()
    zc = (c.mean() - u * cube.cap) / (c.std(ddof=1) / math.sqrt(len(c)))
    ok = abs(zc) <= 3
    pvals = []
    for pts in ([[0, 0, 0], [1, 0, 0]], DiscreteBox((0, 0, 0), 3).points()):
        win = prepare_window(pts)
        ens = sample_ensembles(win, 2.0, 3000, seed=72)
        p = win.potential.e / win.cap
        sup = p > 0
        obs = np.bincount(ens.starts, minlength=len(p))
        ok &= obs[~sup].sum() == 0
        pv = stats.chisquare(obs[sup], p[sup] * obs.sum()).pvalue
        pvals.append(pv)
        ok &= pv > 0.01
    ens = sample_ensembles(cube, 2.0, 200, seed=73)
    coupled = True
    for k in range(ens.n_ensembles):
        e = ens.ensemble(k)
        masks = [interlacement_mask(e, v) for v in (0.25, 0.5, 1.0, 2.0)]
        coupled &= all(not np.any(a & ~b) for a, b in zip(masks, masks[1:]))
        coupled &= np.array_equal(first_hit_levels(e) <= 1.0, masks[2])
    ok &= coupled
    report(7, ok, f"count z={zc:+.2f}, start chi2 p={pvals[0]:.3f}/{pvals[1]:.3f}, coupling exact={coupled}", t0)


def _connected(keep, pts, A, S):
    index = {tuple(p): i for i, p in enumerate(pts)}
    G = nx.Graph()
    G.add_nodes_from(np.flatnonzero(keep))
    for i in np.flatnonzero(keep):
        for ax in range(3):
            q = pts[i].copy()
            q[ax] += 1
            j = index.get(tuple(q))
            if j is not None and keep[j]:
                G.add_edge(i, j)
    a = {index[tuple(p)] for p in A if keep[index[tuple(p)]]}
    s = {index[tuple(p)] for p in S if keep[index[tuple(p)]]}
    return any(comp & a and comp & s for comp in nx.connected_components(G))


def test_criterion_08_disconnection(report):
    t0 = time.perf_counter()
    pair = blow_up(Box.cube(-1, 1, 3), 2, 2)
    r = pair.radius
    pts = grid_points([-r] * 3, [r] * 3)
    rng = np.random.default_rng(808)
    agree = 0
    for _ in range(200):
        grid = rng.random((2 * r + 1,) * 3) < rng.uniform(0.2, 0.8)
        res = check_disconnection_mask(grid, pair)
        agree += res.occurred != _connected(grid.ravel(), pts, pair.A_N, pair.S_N)
    exp = Experiment.build(Box.cube(-1, 1, 3), 2, 2)
    est = estimate_disconnection_probability(None, 2, 2, [0.0, 0.5, 1.0, 2.0, 4.0], 200, seed=8, experiment=exp)
    mono = bool(np.all(np.diff(est["occurred"].astype(int), axis=1) >= 0))
    ok = agree == 200 and mono and est["p"][0] == 0.0
    report(8, ok, f"oracle agreement {agree}/200 on 9^3, monotone={mono}, P(u=0)={est['p'][0]}", t0)


def test_criterion_09_metrics(report):
    t0 = time.perf_counter()
    R = 2.0
    rng = np.random.default_rng(909)
    dirac_err = 0.0
    for _ in range(20):
        x, y = rng.uniform(-R, R, (2, 3))
        P = ScaledMeasure(x[None], np.ones(1), R)
        Q = ScaledMeasure(y[None], np.ones(1), R)
        dirac_err = max(dirac_err, abs(wasserstein1(P, Q).value - np.linalg.norm(x - y)))
    slack = math.inf
    for _ in range(100):
        mu = random_atomic_measure(rng, R, mass_scale=rng.uniform(0.1, 3))
        nu = random_atomic_measure(rng, R, mass_scale=rng.uniform(0.1, 3))
        res = verify_lemma44(mu, nu)
        slack = min(slack, res["slack_lower"], res["slack_upper"])
    tri = -math.inf
    for _ in range(50):
        P, Q, S = (random_atomic_measure(rng, R).normalized() for _ in range(3))
        tri = max(tri, wasserstein1(P, S).value - wasserstein1(P, Q).value - wasserstein1(Q, S).value)
    ok = dirac_err <= 1e-9 and slack >= -1e-7 and tri <= 1e-7
    report(9, ok, f"dirac error {dirac_err:.1e}, sandwich min slack {slack:.2e}, triangle max excess {tri:.2e}", t0)


def test_criterion_10_box_unions(report):
    t0 = time.perf_counter()
    single = []
    for r in (0.05, 0.1, 0.2):
        rep = capacity_ratio_experiment(BoxUnionConfig(O, 8, 32.0, r))
        single.append(max(abs(rep["ratio_upper"] - (1 + 2 * r)), abs(rep["ratio_lower"] - (1 - 2 * r))))
    deltas = [capacity_ratio_experiment(BoxUnionConfig.pair(8, K, 0.1))["delta"] for K in (8, 16, 32)]
    dev = [row["deviation"] for row in a_L_study([4, 8, 16, 32])]
    elapsed = time.perf_counter() - t0
    ok = max(single) <= 1e-6 and deltas[0] > deltas[1] > deltas[2] and dev[0] > dev[1] > dev[2] > dev[3]
    ok &= elapsed < 15 * 60
    report(10, ok, f"single-box error {max(single):.1e}, delta_K {', '.join(f'{d:.5f}' for d in deltas)}, "
                   f"|a_L-1| {', '.join(f'{d:.4f}' for d in dev)}", t0)


def test_criterion_11_entropic_push(report):
    t0 = time.perf_counter()
    A = CompactSetSpec.from_dict({"kind": "box", "lower": [-1, -1, -1], "upper": [1, 1, 1]})
    res = profile_distance_pipeline(A, 6, 2.0, 2.0, 3.0, max_replicas=2400, min_hits=40, seed=1)
    s = res.summary
    push = s["mean_excess"] > 3 * s["mean_excess_se"]
    closer = s["z"] >= 3
    ok = push and closer and res.u_bar_fitted and time.perf_counter() - t0 < 3600
    report(11, ok, f"{s['hits']}/{s['replicas']} disconnected, excess {s['mean_excess']:.3f}"
                   f"±{s['mean_excess_se']:.3f}, fitted u_bar={res.u_bar:.3f}, median d_R "
                   f"{s['median_cond']:.2f} vs {s['median_uncond']:.2f} (z={s['z']:.1f})", t0)
