"""Command-line harness: ``rilab <command> [flags]``.

Every command writes its CSV/JSON outputs plus ``manifest.json`` into
``--out-dir``. Exit status is 0 on success, 1 when a verification suite
fails and 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import ConfigError, RilabError

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


# ---------------------------------------------------------------------------
# output helpers


class Run:
    """Collects outputs of one command and writes the manifest."""

    def __init__(self, command: str, cfg: RunConfig, args: argparse.Namespace):
        self.command = command
        self.cfg = cfg
        self.args = args
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []
        self.t0 = time.perf_counter()
        self.backend: dict = {"equilibrium": cfg.backend, "truncation": cfg.truncation}
        self.results: dict = {}

    @property
    def provenance(self) -> dict:
        return {"seed": self.cfg.seed, "backend": self.cfg.backend,
                "tolerance": self.cfg.tolerances.residual}

    def csv(self, name: str, rows: list[dict]) -> Path:
        path = self.out / name
        prov = self.provenance
        rows = [{**r, **prov} for r in rows]
        cols = list(rows[0]) if rows else list(prov)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            w.writerows(rows)
        self.files.append(path)
        return path

    def json(self, name: str, data) -> Path:
        path = self.out / name
        path.write_text(json.dumps(data, indent=2, default=_jsonable) + "\n")
        self.files.append(path)
        return path

    def manifest(self, status: int) -> dict:
        digests = {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in self.files}
        man = {
            "command": self.command,
            "argv": list(getattr(self.args, "argv", sys.argv[1:])),
            "config": self.cfg.model_dump(),
            "seed": self.cfg.seed,
            "code_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "backend": self.backend,
            "tolerances": self.cfg.tolerances.model_dump(),
            "flags": {"threads": self.args.threads, "paranoid": self.args.paranoid,
                      "toy_scale": self.args.toy_scale},
            "wall_clock_s": time.perf_counter() - self.t0,
            "exit_status": status,
            "outputs": digests,
        }
        (self.out / "manifest.json").write_text(json.dumps(man, indent=2, default=_jsonable) + "\n")
        return man


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def _finite(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x


def _parse_ints(text: str, d: int) -> np.ndarray:
    vals = [int(v) for v in text.replace(" ", "").split(",") if v != ""]
    if len(vals) == 1 and d > 1:
        vals = vals + [0] * (d - 1) if vals[0] != 0 else [0] * d
    if len(vals) != d:
        raise ConfigError(f"--x: expected {d} comma-separated integers")
    return np.array(vals, dtype=np.int64)


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------------------
# commands


def cmd_green(run: Run) -> int:
    from .green import c_d, green

    a, cfg = run.args, run.cfg
    d = a.d or cfg.d
    x = _parse_ints(a.x, d)
    val = green(d, x, tol=cfg.tolerances.green, method=a.method)
    row = {"d": d, "x": ",".join(map(str, x)), "g": val, "C_d": c_d(d), "method": a.method}
    status = EXIT_OK
    if run.args.paranoid:
        other = green(d, x, tol=1e-5, method="truncated-solve" if a.method == "quadrature" else "quadrature")
        row["cross_check"] = other
        if abs(other - val) > 1e-5 * val:
            status = EXIT_FAILED
    print(f"{val:.12f}")
    run.csv("green.csv", [row])
    return status


def _set_points(cfg: RunConfig) -> np.ndarray:
    return cfg.set_spec().lattice_points(cfg.N)


def cmd_capacity(run: Run) -> int:
    from .continuum import brownian_capacity
    from .potential import equilibrium

    cfg = run.cfg
    A = cfg.set_spec()
    K = _set_points(cfg)
    tab = equilibrium(K, backend=cfg.backend, seed=cfg.seed)
    run.backend["equilibrium"] = tab.backend
    brown = brownian_capacity(A)
    row = {"N": cfg.N, "n_points": len(K), "cap_Z": tab.cap, "d_cap_Z_over_N": cfg.d * tab.cap / cfg.N ** (cfg.d - 2),
           "cap_brownian": brown["value"], "cap_brownian_error": brown["error"],
           "brownian_method": brown["method"], "backend_used": tab.backend}
    print(json.dumps(row, default=_jsonable))
    run.csv("capacity.csv", [row])
    return EXIT_OK


def cmd_equilibrium(run: Run) -> int:
    from .potential import apply_G, equilibrium

    cfg = run.cfg
    K = _set_points(cfg)
    tab = equilibrium(K, backend=cfg.backend, seed=cfg.seed)
    run.backend["equilibrium"] = tab.backend
    path = run.out / "equilibrium.csv"
    tab.to_csv(path)
    run.files.append(path)
    sup = tab.support
    resid = float(np.max(np.abs(apply_G((tab.K[sup], tab.e[sup]), 1.0, tab.K, tab.gf) - 1.0)))
    summary = {"cap": tab.cap, "n_points": len(K), "backend": tab.backend, "residual": resid}
    run.json("equilibrium.json", summary)
    print(json.dumps(summary, default=_jsonable))
    if tab.backend == "exact" and resid > cfg.tolerances.residual:
        return EXIT_FAILED
    return EXIT_OK


def _experiment(cfg: RunConfig):
    from .disconnection import Experiment

    return Experiment.build(cfg.set_spec(), cfg.N, cfg.M, truncation=cfg.truncation)


def cmd_sample(run: Run) -> int:
    from .sampler import check_backward_halves, sample_ensembles, save_jsonl

    cfg = run.cfg
    exp = _experiment(cfg)
    ens = sample_ensembles(exp.window, cfg.u, 1, cfg.seed)
    path = run.out / "ensemble.jsonl"
    save_jsonl(ens, path)
    run.files.append(path)
    info = ens.manifest()
    if run.args.paranoid:
        info["backward_halves"] = check_backward_halves(ens, seed=cfg.seed)
    run.json("sample.json", info)
    print(json.dumps(info, default=_jsonable))
    if run.args.paranoid and info["backward_halves"]["reentries"]:
        return EXIT_FAILED
    return EXIT_OK


def cmd_occupation(run: Run) -> int:
    from .sampler import occupation_field, sample_ensembles

    cfg = run.cfg
    exp = _experiment(cfg)
    ens = sample_ensembles(exp.window, cfg.u, 1, cfg.seed)
    L = occupation_field(ens, cfg.u)
    pts = exp.window.points
    rows = [{**{f"x{i + 1}": int(p[i]) for i in range(cfg.d)}, "L": float(v)} for p, v in zip(pts, L)]
    run.csv("occupation.csv", rows)
    summary = {"sites": len(pts), "mean_L": float(L.mean()), "u": cfg.u, "visited": int((L > 0).sum())}
    run.json("occupation.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_disconnect(run: Run) -> int:
    from .disconnection import estimate_disconnection_probability

    cfg, a = run.cfg, run.args
    levels = _parse_floats(a.levels) if a.levels else [cfg.u]
    exp = _experiment(cfg)
    res = estimate_disconnection_probability(cfg.set_spec(), cfg.N, cfg.M, levels,
                                             cfg.budgets.replicas, seed=cfg.seed, experiment=exp)
    rows = [{"u": u, "p": p, "se": s, "replicas": res["n"]} for u, p, s in zip(res["levels"], res["p"], res["se"])]
    run.csv("disconnection.csv", rows)
    occ = res["occurred"]
    order = np.argsort(res["levels"])
    monotone = bool(np.all(np.diff(occ[:, order].astype(int), axis=1) >= 0))
    run.json("disconnection.json", {"monotone": monotone, "rows": rows})
    for r in rows:
        print(f"u={r['u']:.4g}  P[D]={r['p']:.4f} ± {r['se']:.4f}")
    return EXIT_OK if monotone else EXIT_FAILED


def cmd_condition(run: Run) -> int:
    from .disconnection import conditional_occupation_profile

    cfg = run.cfg
    exp = _experiment(cfg)
    res = conditional_occupation_profile(cfg.set_spec(), cfg.N, cfg.M, cfg.u, cfg.budgets.replicas,
                                         seed=cfg.seed, min_hits=cfg.budgets.min_hits, experiment=exp)
    rows = [{**{f"x{i + 1}": int(p[i]) for i in range(cfg.d)}, "cond_mean": cm, "cond_se": cs,
             "uncond_mean": um, "uncond_se": us}
            for p, cm, cs, um, us in zip(res["points"], res["cond_mean"], res["cond_se"],
                                         res["uncond_mean"], res["uncond_se"])]
    run.csv("conditional_profile.csv", rows)
    summary = {k: res[k] for k in ("hits", "replicas", "summary", "summary_se", "uncond_summary",
                                   "uncond_summary_se")}
    run.json("condition.json", summary)
    print(json.dumps(summary, default=_jsonable))
    return EXIT_OK


def cmd_gauge_verify(run: Run) -> int:
    from .gauge import dirichlet_identity, random_admissible_pair, remarkable_case, verify_lemma31
    from .lattice import DiscreteBox
    from .rng import generator

    cfg, a = run.cfg, run.args
    tol = cfg.tolerances.residual
    rng = generator(cfg.seed, 5)
    rows = []
    ok = True
    for t in range(a.trials):
        V, Vp = random_admissible_pair(rng, side=a.support, d=cfg.d)
        r = verify_lemma31(V, Vp)
        di = dirichlet_identity(V)
        r3 = r["residual_3"]
        good = r["residual_1"] <= tol and r["residual_2"] <= tol and (r3 is None or r3 <= tol) \
            and di["residual"] <= tol
        ok &= good
        rows.append({"trial": t, "residual_1": r["residual_1"], "residual_2": r["residual_2"],
                     "residual_3": r3, "third_checked": r["third_checked"], "condition_2": r["condition_2"],
                     "dirichlet_residual": di["residual"], "passed": good})
    C = DiscreteBox(np.zeros(cfg.d, dtype=np.int64), a.support).points()
    rc = remarkable_case(C, 0.5)
    rc_ok = rc["gamma_residual"] <= tol and rc["identity_residual"] <= tol and rc["dirichlet_rel_error"] <= 1e-4
    ok &= rc_ok
    run.csv("gauge_verify.csv", rows)
    run.json("gauge_verify.json", {"trials": a.trials, "support": a.support, "max_residual":
                                   max(max(r["residual_1"], r["residual_2"], r["residual_3"] or 0) for r in rows),
                                   "remarkable_case": rc, "passed": bool(ok)})
    print(f"gauge-verify: {a.trials} trials, max residual "
          f"{max(max(r['residual_1'], r['residual_2'], r['residual_3'] or 0) for r in rows):.2e}, "
          f"remarkable case {rc['gamma_residual']:.2e} -> {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_laplace_verify(run: Run) -> int:
    from .gauge import laplace_mc

    cfg, a = run.cfg, run.args
    u = a.u if a.u is not None else cfg.u
    V = (np.zeros((1, cfg.d), dtype=np.int64), np.array([a.s]))
    res = laplace_mc(V, u, cfg.budgets.ensembles, seed=cfg.seed)
    ok = abs(res["z"]) <= cfg.tolerances.stat_se
    row = {"u": u, "s": a.s, "ensembles": cfg.budgets.ensembles, **res, "passed": ok}
    run.csv("laplace_verify.csv", [row])
    print(json.dumps(row, default=_jsonable))
    return EXIT_OK if ok else EXIT_FAILED


def cmd_bound_verify(run: Run) -> int:
    from .gauge import corollary32_bound, remainder
    from .green import shared_green

    cfg = run.cfg
    g0 = shared_green(cfg.d).g0
    o = np.zeros((1, cfg.d), dtype=np.int64)
    V = (o, np.array([0.4 / g0]))
    eta = (o, np.array([1.0]))
    triples = [(0.05, 0.5, 0.1), (0.05, 0.5, 0.5), (0.02, 1.0, 0.3)]
    rows = []
    ok = True
    for k, (delta, u, t) in enumerate(triples):
        rep = corollary32_bound(V, eta, delta, u, t, n_mc=cfg.budgets.mc_samples, seed=cfg.seed + k)
        ok &= bool(rep.passed)
        rows.append({"delta": delta, "u": u, "t": t, "bound": rep.bound, "tail": rep.tail,
                     "tail_lower_99": rep.tail_lower_99, "remainder": rep.remainder, "passed": rep.passed})
    r1, r2 = remainder(0.02, eta, V), remainder(0.01, eta, V)
    quad = r2 <= r1 / 3
    ok &= quad
    run.csv("bound_verify.csv", rows)
    run.json("bound_verify.json", {"remainder_0.02": r1, "remainder_0.01": r2, "quadratic": quad,
                                   "passed": bool(ok)})
    for r in rows:
        print(f"delta={r['delta']} u={r['u']} t={r['t']}: tail {r['tail']:.4f} "
              f"(99% lower {r['tail_lower_99']:.4f}) <= bound {r['bound']:.4f}: {r['passed']}")
    print(f"R(0.01)/R(0.02) = {r2 / r1:.4f}")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_distance(run: Run) -> int:
    from .metrics import random_atomic_measure, verify_lemma44, wasserstein1
    from .rng import generator

    cfg, a = run.cfg, run.args
    rng = generator(cfg.seed, 9)
    rows = []
    ok = True
    for t in range(a.trials):
        mu = random_atomic_measure(rng, cfg.R, cfg.d)
        nu = random_atomic_measure(rng, cfg.R, cfg.d)
        r = verify_lemma44(mu, nu, tol=cfg.tolerances.transport_slack)
        ok &= bool(r["holds"])
        P, Q, S = (random_atomic_measure(rng, cfg.R, cfg.d).normalized() for _ in range(3))
        tri = wasserstein1(P, S).value - wasserstein1(P, Q).value - wasserstein1(Q, S).value
        ok &= tri <= cfg.tolerances.transport_slack
        rows.append({"trial": t, "d_R": r["d_R"], "d_BL": r["d_BL"], "lower": r["lower"], "upper": r["upper"],
                     "holds": r["holds"], "triangle_excess": tri})
    run.csv("distance.csv", rows)
    print(f"distance: {a.trials} pairs, sandwich and triangle {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_profile_distance(run: Run) -> int:
    from .pipeline import profile_distance_pipeline

    cfg = run.cfg
    res = profile_distance_pipeline(cfg.set_spec(), cfg.N, cfg.M, cfg.R, cfg.u, u_bar=cfg.u_bar,
                                    max_replicas=cfg.budgets.replicas, min_hits=cfg.budgets.min_hits,
                                    seed=cfg.seed, k=cfg.coarse_cells, with_bl=run.args.paranoid)
    run.csv("profile_distance.csv", [{k: _finite(v) for k, v in r.items()} for r in res.rows])
    run.json("profile_distance.json", {"u_bar": res.u_bar, "u_bar_fitted": res.u_bar_fitted, **res.summary})
    print(json.dumps({"u_bar": res.u_bar, **res.summary}, default=_jsonable))
    return EXIT_OK


def cmd_excursions(run: Run) -> int:
    from .excursions import count_excursions, scales, toy_scales
    from .sampler import prepare_window, sample_ensembles

    cfg, a = run.cfg, run.args
    if not a.toy_scale:
        s = scales(cfg.N, cfg.gamma, K=100, d=cfg.d)
        row = {"N": s.N, "gamma": s.gamma, "L0": s.L0, "Lhat0": s.Lhat0, "K": s.K, "K_bar": s.K_bar}
        run.csv("scales.csv", [row])
        print(json.dumps(row))
        return EXIT_OK
    s = toy_scales(cfg.toy_scale.L0, cfg.toy_scale.K, cfg.d)
    z = np.zeros(cfg.d, dtype=np.int64)
    win = prepare_window(s.U(z).points(), truncation=cfg.truncation)
    ens = sample_ensembles(win, cfg.u, 1, cfg.seed)
    levels = sorted({cfg.u * f for f in (0.25, 0.5, 0.75, 1.0)})
    rows = []
    for u in levels:
        rec = count_excursions(ens, u, z, s)
        rows.append({"z": ",".join(map(str, z)), "u": u, "count": rec.count, "local_time": rec.local_time,
                     "occupation_D": rec.occupation_D, "L0": s.L0, "K": s.K})
    run.csv("excursions.csv", rows)
    counts = [r["count"] for r in rows]
    ok = all(b >= c for c, b in zip(counts, counts[1:])) and all(r["local_time"] <= r["occupation_D"] + 1e-9
                                                                  for r in rows)
    print(json.dumps(rows))
    return EXIT_OK if ok else EXIT_FAILED


def cmd_appendix(run: Run) -> int:
    from .appendix import BoxUnionConfig, a_L_study, capacity_ratio_experiment, equilibrium_perturbation_check, long_rows

    cfg = run.cfg
    ap = cfg.appendix
    d = cfg.d
    rows, summary = [], {"single_box": [], "two_box": [], "a_L": []}
    ok = True
    for r in ap.rs:
        rep = capacity_ratio_experiment(BoxUnionConfig(np.zeros((1, d), dtype=np.int64), ap.L, max(ap.Ks), r, d))
        err = max(abs(rep["ratio_upper"] - rep["scaling_upper"]), abs(rep["ratio_lower"] - rep["scaling_lower"]))
        ok &= err <= 1e-6
        summary["single_box"].append({"r": r, "error": err})
        rows += long_rows(rep)
    deltas, pert = [], []
    for K in ap.Ks:
        anchors = np.zeros((ap.n_boxes, d), dtype=np.int64)
        anchors[:, 0] = np.arange(ap.n_boxes) * int(math.ceil(K * ap.L))
        bc = BoxUnionConfig(anchors, ap.L, K, ap.rs[len(ap.rs) // 2], d)
        rep = capacity_ratio_experiment(bc, wos_samples=cfg.budgets.wos_samples if K == min(ap.Ks) else 0,
                                        seed=cfg.seed)
        pc = equilibrium_perturbation_check(bc)
        deltas.append(rep["delta"])
        pert.append(pc["delta"])
        rows += long_rows(rep) + long_rows({**pc, "r": bc.r})
        summary["two_box"].append({"K": K, "delta": rep["delta"], "perturbation_delta": pc["delta"],
                                   "cap_plain": rep["cap_plain"], "cap_plain_wos": rep.get("cap_plain_wos"),
                                   "cap_plain_wos_se": rep.get("cap_plain_wos_se")})
        if "cap_plain_wos" in rep:
            agree = abs(rep["cap_plain"] - rep["cap_plain_wos"]) <= 3 * rep["cap_plain_wos_se"]
            summary["two_box"][-1]["wos_agrees"] = agree
            ok &= agree
    order = np.argsort(ap.Ks)
    ok &= bool(np.all(np.diff(np.array(deltas)[order]) < 0)) and bool(np.all(np.diff(np.array(pert)[order]) < 0))
    aL = a_L_study(ap.Ls, d)
    dev = [r["deviation"] for r in sorted(aL, key=lambda r: r["L"])]
    ok &= bool(np.all(np.diff(dev) < 0))
    for r in aL:
        rows += [{"K": None, "L": r["L"], "r": None, "n_boxes": 1, "quantity": q, "value": r[q]}
                 for q in ("cap_Z", "cap", "a_L", "deviation")]
    summary["a_L"] = aL
    summary["passed"] = bool(ok)
    run.csv("appendix_a.csv", rows)
    run.json("appendix_a.json", summary)
    print(json.dumps(summary, default=_jsonable, indent=1))
    return EXIT_OK if ok else EXIT_FAILED


def cmd_report(run: Run) -> int:
    root = Path(run.args.out_dir)
    entries = []
    for man in sorted(root.rglob("manifest.json")):
        data = json.loads(man.read_text())
        if data.get("command") == "report":
            continue
        entries.append({"dir": str(man.parent), "command": data.get("command"),
                        "exit_status": data.get("exit_status"), "seed": data.get("seed"),
                        "wall_clock_s": data.get("wall_clock_s")})
    run.json("report.json", entries)
    for e in entries:
        print(f"{e['command']:<18} exit={e['exit_status']}  {e['dir']}")
    return EXIT_OK if all(e["exit_status"] == 0 for e in entries) else EXIT_FAILED


COMMANDS = {
    "green": cmd_green, "capacity": cmd_capacity, "equilibrium": cmd_equilibrium,
    "sample": cmd_sample, "occupation": cmd_occupation, "disconnect": cmd_disconnect,
    "condition": cmd_condition, "gauge-verify": cmd_gauge_verify, "laplace-verify": cmd_laplace_verify,
    "bound-verify": cmd_bound_verify, "distance": cmd_distance, "profile-distance": cmd_profile_distance,
    "excursions": cmd_excursions, "appendix-a": cmd_appendix, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, help="number of worker threads")
    common.add_argument("--out-dir", default="rilab-out", help="output directory")
    common.add_argument("--paranoid", action="store_true", help="run extra cross-checks")
    common.add_argument("--toy-scale", action="store_true", help="use the configured desk-scale L0, K")

    p = argparse.ArgumentParser(prog="rilab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "green":
            sp.add_argument("--d", type=int)
            sp.add_argument("--x", default="0", help="difference vector, e.g. 1,0,0 (0 for the origin)")
            sp.add_argument("--method", choices=["quadrature", "truncated-solve"], default="quadrature")
        elif name == "gauge-verify":
            sp.add_argument("--trials", type=int, default=20)
            sp.add_argument("--support", type=int, default=3, help="side of the cubic support")
        elif name == "laplace-verify":
            sp.add_argument("--s", type=float, default=0.3, help="single-site potential value")
            sp.add_argument("--u", type=float)
        elif name == "distance":
            sp.add_argument("--trials", type=int, default=100)
        elif name == "disconnect":
            sp.add_argument("--levels", help="comma-separated levels (default: u)")
    return p


def main(argv=None) -> int:
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    try:
        cfg = load_config(args.config, {"seed": args.seed})
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads:
        import numba

        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    run = Run(args.command, cfg, args)
    try:
        status = COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RilabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        status = EXIT_FAILED
    run.manifest(status)
    return status


if __name__ == "__main__":
    sys.exit(main())
