"""Distances between sampled occupation measures and the profile ``M^u``.

Replicas are split by index parity. Even replicas calibrate ``u_bar`` (when it
is not given) by least squares of the profile against the mean conditioned
field; odd replicas are used for the comparison, so the fitted parameter
never sees the data it is judged on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .continuum import ProfileField
from .disconnection import Experiment, conditional_occupation_profile
from .errors import PreconditionError
from .lattice import CompactSetSpec
from .metrics import ScaledMeasure, coarsen, coarsening_error, density_measure, distance_report, scaled_measure
from .rng import generator


@dataclass
class PipelineResult:
    u: float
    u_bar: float
    u_bar_fitted: bool
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def fit_u_bar(mean_field: np.ndarray, h: np.ndarray, u: float, s_max: float = 20.0) -> float:
    """Least-squares ``u_bar`` for ``(sqrt(u) + (sqrt(u_bar) - sqrt(u)) h)^2 ~ mean_field``."""
    ru = math.sqrt(u)

    def loss(s):
        return float(((mean_field - (ru + s * h) ** 2) ** 2).sum())

    s = minimize_scalar(loss, bounds=(1e-9, s_max), method="bounded").x
    return (ru + s) ** 2


def bootstrap_median_diff(a: np.ndarray, b: np.ndarray, n_boot: int = 2000, seed: int = 0) -> float:
    """Bootstrap standard error of ``median(a) - median(b)``."""
    rng = generator(seed, 31)
    ia = rng.integers(0, len(a), size=(n_boot, len(a)))
    ib = rng.integers(0, len(b), size=(n_boot, len(b)))
    return float(np.std(np.median(a[ia], axis=1) - np.median(b[ib], axis=1), ddof=1))


def profile_distance_pipeline(A: CompactSetSpec, N: int, M: float, R: float, u: float,
                              u_bar: float | None = None, max_replicas: int = 2000,
                              min_hits: int = 40, seed: int = 0, k: int = 9, N_ref: int = 24,
                              with_bl: bool = False, n_boot: int = 2000,
                              experiment: Experiment | None = None) -> PipelineResult:
    """Per-replica ``d_R(L_{N,u}, M^u)`` with disconnection flags and a summary.

    Both measures are coarsened onto a ``k^d`` partition of ``B_R`` before the
    transport solve; this moves each by at most ``coarsening_error(R, k, d)``
    in the Wasserstein part.

    Raises
    ------
    PreconditionError
        If ``[-M, M]^d`` is not inside ``B_R`` or the sampled box does not cover ``N B_R``.
    ConditioningTooRare
        If fewer than ``min_hits`` replicas disconnect.
    """
    if R < M:
        raise PreconditionError("need [-M, M]^d inside B_R")
    exp = experiment or Experiment.build(A, N, M)
    pts = exp.window.points
    d = pts.shape[1]
    store: dict[int, tuple[bool, ScaledMeasure]] = {}
    cal_sum = np.zeros(len(pts))
    cal_hits = 0

    def record(i, L, ok):
        nonlocal cal_hits
        store[i] = (bool(ok), coarsen(scaled_measure(L, pts, N, R), k))
        if ok and i % 2 == 0:
            cal_sum[:] += L
            cal_hits += 1

    res = conditional_occupation_profile(A, N, M, u, max_replicas, seed=seed, min_hits=min_hits,
                                         experiment=exp, on_replica=record)
    pf_h = ProfileField(u, u + 1.0, A, N_ref=N_ref).potential(pts / N)
    fitted = u_bar is None
    if fitted:
        if cal_hits == 0:
            raise PreconditionError("no conditioned calibration replicas to fit u_bar")
        u_bar = fit_u_bar(cal_sum / cal_hits, pf_h, u)
    if not u_bar > u:
        raise PreconditionError(f"need u < u_bar, got u={u}, u_bar={u_bar}")
    prof_vals = (math.sqrt(u) + (math.sqrt(u_bar) - math.sqrt(u)) * pf_h) ** 2
    prof = coarsen(scaled_measure(prof_vals, pts, N, R), k)
    flat = coarsen(density_measure(lambda x: np.full(len(x), u), N, R, d), k)

    rows = []
    for i in sorted(store):
        ok, mu = store[i]
        rep = distance_report(mu, prof, with_bl=with_bl)
        rows.append({"replica": i, "occurred": ok, "half": "calibration" if i % 2 == 0 else "evaluation",
                     "d_R": rep.d_R, "d_W": rep.d_W, "mass_gap": rep.mass_gap, "d_BL": rep.d_BL,
                     "d_R_flat": distance_report(mu, flat, with_bl=False).d_R, "total": mu.total})

    ev = [r for r in rows if r["half"] == "evaluation"]
    cond = np.array([r["d_R"] for r in ev if r["occurred"]])
    unc = np.array([r["d_R"] for r in ev])
    summary = {
        "replicas": res["replicas"], "hits": res["hits"], "u": u, "u_bar": u_bar,
        "mean_excess": res["summary"], "mean_excess_se": res["summary_se"],
        "coarsening_error": coarsening_error(R, k, d),
        "n_cond_eval": int(len(cond)), "n_uncond_eval": int(len(unc)),
        "self_distance": distance_report(prof, prof, with_bl=False).d_R,
        "median_uncond_flat": float(np.median([r["d_R_flat"] for r in ev])) if ev else math.nan,
    }
    if len(cond) >= 2 and len(unc) >= 2:
        se = bootstrap_median_diff(unc, cond, n_boot, seed)
        diff = float(np.median(unc) - np.median(cond))
        summary.update({"median_cond": float(np.median(cond)), "median_uncond": float(np.median(unc)),
                        "median_diff": diff, "median_diff_se": se,
                        "z": diff / se if se > 0 else math.inf})
    return PipelineResult(u=u, u_bar=float(u_bar), u_bar_fitted=fitted, rows=rows, summary=summary)
