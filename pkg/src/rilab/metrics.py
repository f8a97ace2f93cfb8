"""Scaled occupation measures and transport distances on the box ``B_R = [-R, R]^d``.

Measures are atomic. The 1-Wasserstein distance is solved in primal form as a
transportation problem (network simplex from POT) and in dual form as a
linear program over Lipschitz potentials on the joint support; the gap
between the two is reported. ``d_BL`` uses the same pair of routes with mass
creation and destruction priced at 1.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, sparse
from scipy.spatial.distance import cdist

for _backend in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")
import ot  # noqa: E402

from .errors import PreconditionError  # noqa: E402
from .lattice import as_points, grid_points  # noqa: E402

MASS_TOL = 1e-9
LP_ATOM_LIMIT = 400


@dataclass
class ScaledMeasure:
    """Atomic nonnegative measure on ``B_R``."""

    points: np.ndarray
    masses: np.ndarray
    R: float

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float).ravel()
        pts = np.asarray(self.points, dtype=float)
        self.points = pts.reshape(len(self.masses), pts.shape[-1] if pts.ndim > 1 else -1)
        if np.any(self.masses < 0):
            raise PreconditionError("masses must be nonnegative")

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def restricted(self) -> "ScaledMeasure":
        keep = np.all(np.abs(self.points) <= self.R + 1e-12, axis=1) & (self.masses > 0)
        return ScaledMeasure(self.points[keep], self.masses[keep], self.R)

    def normalized(self) -> "ScaledMeasure":
        return ScaledMeasure(self.points, self.masses / self.total, self.R)

    def scaled(self, factor: float) -> "ScaledMeasure":
        return ScaledMeasure(self.points, factor * self.masses, self.R)

    @classmethod
    def zero(cls, d: int, R: float) -> "ScaledMeasure":
        return cls(np.zeros((0, d)), np.zeros(0), R)


def scaled_measure(field, points, N: int, R: float) -> ScaledMeasure:
    """``N^{-d} sum_x L(x) delta_{x/N}`` restricted to ``B_R``.

    Raises
    ------
    PreconditionError
        If the field's points do not cover ``N B_R ∩ Z^d``.
    """
    points = as_points(points)
    field = np.asarray(field, dtype=float)
    d = points.shape[1]
    r = int(math.floor(N * R + 1e-9))
    inside = np.all(np.abs(points) <= r, axis=1)
    if inside.sum() != (2 * r + 1) ** d:
        raise PreconditionError(f"field window does not cover N B_R (|x|_inf <= {r})")
    keep = inside & (field > 0)
    return ScaledMeasure(points[keep] / N, field[keep] / N**d, R)


def density_measure(density, N: int, R: float, d: int) -> ScaledMeasure:
    """Midpoint discretisation of ``density(x) dx`` on the ``1/N`` grid of ``B_R``."""
    r = int(math.floor(N * R + 1e-9))
    pts = grid_points(-r * np.ones(d, np.int64), r * np.ones(d, np.int64)) / N
    vals = np.asarray(density(pts), dtype=float)
    return ScaledMeasure(pts, vals / N**d, R).restricted()


def coarsen(mu: ScaledMeasure, k: int) -> ScaledMeasure:
    """Merge atoms into the centres of a ``k^d`` partition of ``B_R``.

    Each atom moves by at most half a cell diagonal, ``sqrt(d) R / k``.
    """
    h = 2 * mu.R / k
    cell = np.clip(np.floor((mu.points + mu.R) / h), 0, k - 1).astype(np.int64)
    flat = np.ravel_multi_index(cell.T, (k,) * mu.d) if len(cell) else np.zeros(0, np.int64)
    uniq, inv = np.unique(flat, return_inverse=True)
    masses = np.bincount(inv, weights=mu.masses)
    centres = -mu.R + (np.array(np.unravel_index(uniq, (k,) * mu.d)).T + 0.5) * h
    return ScaledMeasure(centres, masses, mu.R)


def coarsening_error(R: float, k: int, d: int) -> float:
    """Bound on how much coarsening both arguments can change ``W_1``."""
    return 2 * math.sqrt(d) * R / k


# ---------------------------------------------------------------------------
# transport solvers


def _union(mu: ScaledMeasure, nu: ScaledMeasure):
    pts = np.concatenate([mu.points, nu.points])
    uniq, inv = np.unique(np.round(pts, 12), axis=0, return_inverse=True)
    inv = inv.ravel()
    p = np.bincount(inv[:len(mu.points)], weights=mu.masses, minlength=len(uniq))
    q = np.bincount(inv[len(mu.points):], weights=nu.masses, minlength=len(uniq))
    return uniq, p, q


def _lipschitz_lp(pts: np.ndarray, f: np.ndarray, bounded: bool) -> float:
    """``max sum_i eta_i f_i`` over ``eta`` 1-Lipschitz on ``pts`` (and ``|eta| <= 1``)."""
    n = len(pts)
    if n == 0:
        return 0.0
    if n == 1:
        return abs(f[0]) if bounded else 0.0
    i, j = np.where(~np.eye(n, dtype=bool))
    D = cdist(pts, pts)
    rows = np.arange(len(i))
    A = sparse.csr_matrix((np.r_[np.ones(len(i)), -np.ones(len(i))],
                           (np.r_[rows, rows], np.r_[i, j])), shape=(len(i), n))
    bounds = [(-1.0, 1.0)] * n if bounded else [(None, None)] * n
    if not bounded:
        bounds[0] = (0.0, 0.0)
    res = optimize.linprog(-f, A_ub=A, b_ub=D[i, j], bounds=bounds, method="highs")
    if res.status != 0:
        raise PreconditionError(f"dual LP failed: {res.message}")
    return float(-res.fun)


def _emd(a: np.ndarray, b: np.ndarray, M: np.ndarray) -> float:
    return float(ot.emd2(a, b, M, numItermax=10_000_000))


@dataclass
class TransportResult:
    value: float
    solver: str
    gap: float | None = None
    dual: float | None = None


def wasserstein1(P: ScaledMeasure, Q: ScaledMeasure, dual: bool | None = None) -> TransportResult:
    """``W_1`` between probability measures with Euclidean ground cost.

    The primal value comes from the network simplex. When ``dual`` is true
    (default for supports up to ``LP_ATOM_LIMIT`` points) the Kantorovich
    dual is also solved and the gap reported.
    """
    if abs(P.total - 1) > MASS_TOL or abs(Q.total - 1) > MASS_TOL:
        raise PreconditionError(f"unbalanced masses {P.total} and {Q.total}; W1 needs probabilities")
    a = P.masses / P.total
    b = Q.masses / Q.total
    primal = _emd(a, b, cdist(P.points, Q.points))
    pts, p, q = _union(P, Q)
    if dual is None:
        dual = len(pts) <= LP_ATOM_LIMIT
    if not dual:
        return TransportResult(primal, "flow")
    dv = _lipschitz_lp(pts, p / p.sum() - q / q.sum(), bounded=False)
    return TransportResult(primal, "flow+lp", abs(primal - dv), dv)


def d_bl(mu: ScaledMeasure, nu: ScaledMeasure, dual: bool | None = None) -> TransportResult:
    """Bounded Lipschitz distance on ``B_R``.

    Primal: balanced transport after adding a dummy node on each side
    (creation or destruction of mass costs 1, dummy to dummy costs 0).
    """
    a = np.r_[mu.masses, nu.total]
    b = np.r_[nu.masses, mu.total]
    M = np.zeros((len(a), len(b)))
    M[:-1, :-1] = cdist(mu.points, nu.points)
    M[:-1, -1] = 1.0
    M[-1, :-1] = 1.0
    total = a.sum()
    if total == 0:
        return TransportResult(0.0, "flow", 0.0, 0.0)
    primal = total * _emd(a / total, b / total, M)
    pts, p, q = _union(mu, nu)
    if dual is None:
        dual = len(pts) <= LP_ATOM_LIMIT
    if not dual:
        return TransportResult(primal, "flow")
    dv = _lipschitz_lp(pts, p - q, bounded=True)
    return TransportResult(primal, "flow+lp", abs(primal - dv), dv)


@dataclass
class DistanceReport:
    d_W: float
    d_R: float
    d_BL: float
    solver: str
    gap: float | None
    mass_gap: float


def d_R(mu: ScaledMeasure, nu: ScaledMeasure, dual: bool | None = None) -> float:
    return distance_report(mu, nu, dual=dual, with_bl=False).d_R


def distance_report(mu: ScaledMeasure, nu: ScaledMeasure, dual: bool | None = None,
                    with_bl: bool = True) -> DistanceReport:
    """``d_R``, its Wasserstein part and ``d_BL`` for two measures on the same box."""
    if abs(mu.R - nu.R) > 1e-12:
        raise PreconditionError("measures live on different boxes")
    mu, nu = mu.restricted(), nu.restricted()
    m, n = mu.total, nu.total
    bl = d_bl(mu, nu, dual) if with_bl else None
    if m == 0 and n == 0:
        return DistanceReport(0.0, 0.0, 0.0, "trivial", 0.0, 0.0)
    if m == 0 or n == 0:
        return DistanceReport(math.inf, math.inf, bl.value if bl else math.nan, "trivial", 0.0,
                              abs(m - n))
    w = wasserstein1(mu.normalized(), nu.normalized(), dual)
    gaps = [g for g in (w.gap, bl.gap if bl else None) if g is not None]
    return DistanceReport(d_W=w.value, d_R=abs(m - n) + w.value,
                          d_BL=bl.value if bl else math.nan, solver=w.solver,
                          gap=max(gaps) if gaps else None, mass_gap=abs(m - n))


def verify_lemma44(mu: ScaledMeasure, nu: ScaledMeasure, tol: float = 1e-7) -> dict:
    """Check ``d_BL/(m ∧ n + 1) <= d_R <= d_BL (1 + 2 ((sqrt(d) R) ∨ 1)/(m ∨ n))``."""
    rep = distance_report(mu, nu)
    m, n = mu.restricted().total, nu.restricted().total
    if m <= 0 or n <= 0:
        raise PreconditionError("both measures need positive mass on B_R")
    lower = rep.d_BL / (min(m, n) + 1)
    upper = rep.d_BL * (1 + 2 * max(math.sqrt(mu.d) * mu.R, 1.0) / max(m, n))
    slack_lo = rep.d_R - lower
    slack_hi = upper - rep.d_R
    return {"lower": lower, "d_R": rep.d_R, "upper": upper, "d_BL": rep.d_BL,
            "slack_lower": slack_lo, "slack_upper": slack_hi,
            "holds": bool(slack_lo >= -tol and slack_hi >= -tol), "gap": rep.gap}


def random_atomic_measure(rng: np.random.Generator, R: float, d: int = 3, n_atoms: int = 6,
                          mass_scale: float = 1.0) -> ScaledMeasure:
    pts = rng.uniform(-R, R, size=(n_atoms, d))
    return ScaledMeasure(pts, mass_scale * rng.exponential(size=n_atoms), R)


# ---------------------------------------------------------------------------
# mollifiers


def _poly_norm(k: int, d: int) -> float:
    # int_{|y|<1} (1 - |y|^2)^k dy
    return math.pi ** (d / 2) * math.gamma(k + 1) / math.gamma(d / 2 + k + 1)


@lru_cache(maxsize=None)
def _exp_norm(d: int) -> float:
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    val, _ = integrate.quad(lambda r: math.exp(-1 / (1 - r * r)) * r ** (d - 1), 0, 1,
                            epsabs=0, epsrel=1e-13, limit=200)
    return area * val


@dataclass(frozen=True)
class Mollifier:
    """Radial bump density supported in the unit ball.

    ``bump-poly4``: ``c (1 - |y|^2)^4``; ``bump-exp``: ``c exp(-1/(1-|y|^2))``.
    """

    kind: str = "bump-poly4"
    d: int = 3

    def __post_init__(self):
        if self.kind not in ("bump-poly4", "bump-exp"):
            raise PreconditionError(f"unknown mollifier {self.kind!r}")

    @property
    def constant(self) -> float:
        if self.kind == "bump-poly4":
            return 1.0 / _poly_norm(4, self.d)
        return 1.0 / _exp_norm(self.d)

    def radial(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        ins = r < 1
        if self.kind == "bump-poly4":
            out[ins] = (1 - r[ins] ** 2) ** 4
        else:
            out[ins] = np.exp(-1 / (1 - r[ins] ** 2))
        return self.constant * out

    def __call__(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return self.radial(np.linalg.norm(y, axis=1))

    def scaled(self, eps: float):
        """``chi_eps(y) = eps^{-d} chi(y / eps)``."""
        _check_eps(eps)
        return lambda y: self(np.atleast_2d(y) / eps) / eps**self.d

    def radial_integral(self, power: int = 0) -> float:
        """``int chi(y) |y|^power dy`` by quadrature."""
        area = 2 * math.pi ** (self.d / 2) / math.gamma(self.d / 2)
        val, _ = integrate.quad(lambda r: float(self.radial(r)) * r ** (self.d - 1 + power), 0, 1,
                                epsabs=0, epsrel=1e-12, limit=200)
        return area * val

    @property
    def sup(self) -> float:
        return float(self.radial(0.0))


def _check_eps(eps: float):
    if not 0 < eps < 1:
        raise PreconditionError(f"epsilon must lie in (0, 1), got {eps}")


def mollified_family(chi: Mollifier, eps: float, N: int, x):
    """Test function ``z -> chi_eps(z - x/N)``."""
    _check_eps(eps)
    centre = np.asarray(x, dtype=float) / N
    ce = chi.scaled(eps)
    return lambda z: ce(np.atleast_2d(z) - centre)


def discrete_convolution(eta, eps: float, N: int, R: float, x, chi: Mollifier | None = None) -> np.ndarray:
    """``eta_N^eps(x) = N^{-d} sum_y chi_eps(x - y/N) eta(y/N)``, with eta zero off ``B_R``."""
    _check_eps(eps)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    chi = chi or Mollifier(d=d)
    ce = chi.scaled(eps)
    span = int(math.ceil(eps * N)) + 1
    offs = grid_points(-span * np.ones(d, np.int64), span * np.ones(d, np.int64))
    out = np.empty(len(x))
    for i, xi in enumerate(x):
        y = np.rint(xi * N).astype(np.int64) + offs
        z = y / N
        w = ce(xi - z)
        ins = np.all(np.abs(z) <= R + 1e-12, axis=1) & (w > 0)
        out[i] = np.sum(w[ins] * eta(z[ins])) / N**d
    return out


def closeness_constant(eta, chi: Mollifier, eps_values, N: int, R: float, n_query: int = 200,
                       seed: int = 0) -> dict:
    """Fit ``c`` in ``sup_{B_{R-eps}} |eta_N^eps - eta| <= c eps`` on random query points."""
    rng = np.random.default_rng(seed)
    errs = []
    for eps in eps_values:
        q = rng.uniform(-(R - eps), R - eps, size=(n_query, chi.d))
        errs.append(float(np.max(np.abs(discrete_convolution(eta, eps, N, R, q, chi) - eta(q)))))
    eps_values = np.asarray(eps_values, dtype=float)
    errs = np.asarray(errs)
    return {"eps": eps_values, "sup_error": errs, "c_fit": float(np.max(errs / eps_values)),
            "c_moment": chi.radial_integral(1)}
