"""Gauge functions ``gamma_V = (I - G V)^{-1} 1`` and their perturbation theory.

``G V`` has finite rank, so every identity reduces to dense linear algebra on
the (joint) support; values off the support are reconstructed from
``gamma_V(x) = 1 + sum_y g(x - y) V(y) gamma_V(y)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .errors import InadmissiblePotential, PreconditionError
from .green import GreenFunction
from .lattice import PointIndex, as_points, unique_points
from .potential import _green_for, as_function, potential_energy

ADMISSIBILITY_MARGIN = 0.999


@dataclass
class Potential:
    """A finitely supported potential ``V`` on ``Z^d``."""

    points: np.ndarray
    values: np.ndarray
    gf: GreenFunction = field(repr=False)

    @classmethod
    def make(cls, V, gf: GreenFunction | None = None, d: int | None = None) -> "Potential":
        if isinstance(V, Potential):
            return V
        pts, vals = as_function(V, d)
        keep = vals != 0
        pts, vals = pts[keep], vals[keep]
        if len(pts):
            order = np.lexsort(pts.T[::-1])
            pts, vals = pts[order], vals[order]
            if len(unique_points(pts)) != len(pts):
                raise PreconditionError("potential has repeated points")
        d = pts.shape[1] if len(pts) else (d or 3)
        gf = _green_for(pts, gf, d) if len(pts) else (gf or _green_for(np.zeros((1, d), np.int64), None, d))
        return cls(points=pts, values=vals, gf=gf)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def on(self, S: np.ndarray) -> np.ndarray:
        """Values on the rows of ``S`` (zero off the support)."""
        out = np.zeros(len(S))
        if len(self.points):
            idx = PointIndex(S).lookup(self.points)
            if np.any(idx < 0):
                raise PreconditionError("support not contained in the given point set")
            out[idx] = self.values
        return out

    def abs(self) -> "Potential":
        return Potential(self.points, np.abs(self.values), self.gf)

    def norm(self) -> float:
        """``||G|V|||_inf``, attained on the support (potential of a positive charge)."""
        if len(self.points) == 0:
            return 0.0
        return float(np.max(self.gf.matrix(self.points) @ np.abs(self.values)))

    def admissible(self) -> bool:
        return self.norm() < 1.0


def joint_support(*potentials: Potential) -> np.ndarray:
    pts = [p.points for p in potentials if len(p.points)]
    if not pts:
        return np.zeros((0, potentials[0].d), dtype=np.int64)
    return unique_points(np.concatenate(pts))


def _check_admissible(V: Potential, name: str = "V") -> float:
    n = V.norm()
    if n >= 1.0:
        raise InadmissiblePotential(f"||G|{name}|||_inf = {n:.6g} >= 1")
    if n > ADMISSIBILITY_MARGIN:
        raise InadmissiblePotential(
            f"||G|{name}|||_inf = {n:.6g} exceeds the margin {ADMISSIBILITY_MARGIN}")
    return n


def _gamma_on(S: np.ndarray, v: np.ndarray, GS: np.ndarray) -> np.ndarray:
    return linalg.solve(np.eye(len(S)) - GS * v[None, :], np.ones(len(S)))


@dataclass
class GaugeResult:
    """``gamma_V`` on the support, with its pairing and Dirichlet energy."""

    V: Potential
    gamma_support: np.ndarray
    norm: float
    condition: float
    residual: float
    window: np.ndarray | None = None
    gamma_window: np.ndarray | None = None
    _energy: dict | None = field(default=None, repr=False)

    @property
    def pairing(self) -> float:
        """``<V, gamma_V>``."""
        return float(self.V.values @ self.gamma_support)

    @property
    def pairing_sq(self) -> float:
        """``<V, gamma_V^2>``."""
        return float(self.V.values @ self.gamma_support**2)

    @property
    def sup(self) -> float:
        """``||gamma_V||_inf``; ``gamma_V - 1`` is harmonic off the support and vanishes at infinity."""
        g = self.gamma_support
        return float(max(1.0, g.max(initial=1.0), -g.min(initial=1.0)))

    def __call__(self, x) -> np.ndarray:
        x = as_points(x, self.V.d)
        if len(self.V.points) == 0:
            return np.ones(len(x))
        mu = self.V.values * self.gamma_support
        gf = _green_for(np.concatenate([self.V.points, x]), self.V.gf, self.V.d)
        return 1.0 + gf.matrix(x, self.V.points) @ mu

    def energy(self) -> dict:
        """``E(gamma_V - 1)`` by the edge-sum route and by ``<mu, G mu>``, ``mu = V gamma_V``."""
        if self._energy is None:
            if len(self.V.points) == 0:
                self._energy = {"window": 0.0, "pairing": 0.0}
            else:
                mu = (self.V.points, self.V.values * self.gamma_support)
                self._energy = potential_energy(mu, self.V.gf)
        return self._energy

    @property
    def dirichlet(self) -> float:
        return self.energy()["window"]


def gauge(V, window=None, gf: GreenFunction | None = None) -> GaugeResult:
    """Solve ``f = 1 + G V f`` on supp V and extend to ``window``.

    Raises
    ------
    InadmissiblePotential
        If ``||G|V|||_inf`` is not below the admissibility margin.
    """
    V = Potential.make(V, gf)
    n = _check_admissible(V)
    S = V.points
    if len(S) == 0:
        res = GaugeResult(V, np.zeros(0), 0.0, 1.0, 0.0)
    else:
        GS = V.gf.matrix(S)
        A = np.eye(len(S)) - GS * V.values[None, :]
        gam = linalg.solve(A, np.ones(len(S)))
        res = GaugeResult(V, gam, n, float(np.linalg.cond(A)),
                          float(np.max(np.abs(A @ gam - 1.0))))
    if window is not None:
        res.window = as_points(window, V.d)
        res.gamma_window = res(res.window)
    return res


def gauge_series(V, n_terms: int = 200, tol: float = 1e-15) -> np.ndarray:
    """``sum_n (G V)^n 1`` on the support, an independent route to ``gamma_V``."""
    V = Potential.make(V)
    _check_admissible(V)
    M = V.gf.matrix(V.points) * V.values[None, :]
    term = np.ones(len(V.points))
    total = term.copy()
    for _ in range(n_terms):
        term = M @ term
        total += term
        if np.max(np.abs(term)) < tol:
            break
    return total


def resolvent_norm(V: Potential, W: Potential, S: np.ndarray | None = None) -> float:
    """``||(I - G|V|)^{-1} G|W|||_inf``.

    The function ``F = (I - G|V|)^{-1} G|W| 1`` is the potential of the
    positive charge ``|W| + |V| F``, so its supremum is attained on the joint
    support.
    """
    if S is None:
        S = joint_support(V, W)
    if len(S) == 0:
        return 0.0
    G = V.gf.matrix(S)
    av, aw = np.abs(V.on(S)), np.abs(W.on(S))
    F = linalg.solve(np.eye(len(S)) - G * av[None, :], G @ aw)
    return float(F.max())


# ---------------------------------------------------------------------------
# perturbation identities


def verify_lemma31(V, Vp, gf: GreenFunction | None = None) -> dict:
    """Residuals of the three perturbation identities for ``V -> V'``.

    1. ``gamma_{V'} - gamma_V = (I - GV)^{-1} G (V' - V) gamma_{V'}``
    2. ``<V', gamma_{V'}> - <V, gamma_V> = <(V' - V) gamma_V, gamma_{V'}>``
    3. ``gamma_{V'} = (I - (I - GV)^{-1} G (V' - V))^{-1} gamma_V`` when
       ``||(I - G|V|)^{-1} G|V' - V|||_inf < 1``; skipped with a flag otherwise.
    """
    V = Potential.make(V, gf)
    Vp = Potential.make(Vp, V.gf, V.d)
    _check_admissible(V, "V")
    _check_admissible(Vp, "V'")
    S = joint_support(V, Vp)
    if len(S) == 0:
        return {"residual_1": 0.0, "residual_2": 0.0, "residual_3": 0.0,
                "condition_2": 0.0, "third_checked": True}
    gf = _green_for(S, V.gf, V.d)
    G = gf.matrix(S)
    v, vp = V.on(S), Vp.on(S)
    dv = vp - v
    I = np.eye(len(S))
    g = _gamma_on(S, v, G)
    gp = _gamma_on(S, vp, G)
    rhs1 = linalg.solve(I - G * v[None, :], G @ (dv * gp))
    r1 = float(np.max(np.abs((gp - g) - rhs1)))
    r2 = abs((vp @ gp - v @ g) - (dv * g) @ gp)
    W = Potential.make((S, dv), gf) if np.any(dv) else Potential(S[:0], dv[:0], gf)
    c2 = resolvent_norm(V, W, S) if len(W.points) else 0.0
    out = {"residual_1": r1, "residual_2": float(r2), "condition_2": c2,
           "third_checked": c2 < 1.0, "residual_3": None}
    if c2 < 1.0:
        T = linalg.solve(I - G * v[None, :], G * dv[None, :])
        gp3 = linalg.solve(I - T, g)
        out["residual_3"] = float(np.max(np.abs(gp3 - gp)))
    return out


def remarkable_case(C, a: float, window=None, gf: GreenFunction | None = None) -> dict:
    """Compare ``gamma_{a e_C}`` with ``1 + a/(1-a) h_C`` and ``E(gamma - 1)`` with
    ``(a/(1-a))^2 cap(C)``."""
    from .potential import equilibrium

    if not 0 < a < 1:
        raise PreconditionError("need 0 < a < 1")
    table = equilibrium(C, backend="exact", gf=gf)
    sup = table.support
    res = gauge((table.K[sup], a * table.e[sup]), gf=table.gf)
    pts = table.K if window is None else np.concatenate([table.K, as_points(window, table.d)])
    closed = 1.0 + a / (1 - a) * table.h(pts)
    gamma = res(pts)
    energy = res.energy()
    predicted = (a / (1 - a)) ** 2 * table.cap
    return {
        "gamma_residual": float(np.max(np.abs(gamma - closed))),
        "dirichlet_window": energy["window"],
        "dirichlet_pairing": energy["pairing"],
        "dirichlet_predicted": predicted,
        "dirichlet_rel_error": abs(energy["window"] - predicted) / predicted,
        "identity_residual": abs(res.pairing_sq - res.pairing - energy["window"]),
        "cap": table.cap,
    }


def dirichlet_identity(V, gf: GreenFunction | None = None) -> dict:
    """``<V, gamma^2> - <V, gamma>`` against the edge-sum energy of ``gamma - 1``."""
    res = gauge(V, gf=gf)
    lhs = res.pairing_sq - res.pairing
    e = res.energy()
    return {"lhs": lhs, "dirichlet": e["window"], "pairing_route": e["pairing"],
            "residual": abs(lhs - e["window"])}


# ---------------------------------------------------------------------------
# Laplace functional and the exponential bound


def laplace_functional(V, u: float, gf: GreenFunction | None = None) -> float:
    """``E[exp <L_u, V>] = exp(u <V, gamma_V>)``."""
    if u < 0:
        raise PreconditionError("u must be nonnegative")
    res = gauge(V, gf=gf)
    return math.exp(u * res.pairing)


def _window_for(V: Potential, window=None):
    from .sampler import prepare_window

    W = V.points if window is None else as_points(window, V.d)
    if len(W) == 0:
        raise PreconditionError("empty potential needs an explicit window")
    win = prepare_window(W)
    idx = win.index().lookup(V.points)
    if np.any(idx < 0):
        raise PreconditionError("window must contain the support of V")
    return win, idx


def sampled_pairings(V, u: float, n_ensembles: int, seed: int = 0, window=None,
                     batch: int = 20000) -> np.ndarray:
    """``<L_u, V>`` for independent ensembles sampled on a window containing supp V."""
    from .sampler import occupation_pairing, sample_ensembles

    V = Potential.make(V)
    win, idx = _window_for(V, window)
    out = []
    for b, lo in enumerate(range(0, n_ensembles, batch)):
        m = min(batch, n_ensembles - lo)
        ens = sample_ensembles(win, u, m, seed, stream=b)
        out.append(occupation_pairing(ens, u, idx, V.values))
    return np.concatenate(out) if out else np.zeros(0)


def laplace_mc(V, u: float, n_ensembles: int, seed: int = 0, window=None) -> dict:
    """Empirical ``E[exp <L_u, V>]`` against the closed form."""
    V = Potential.make(V)
    n = V.norm()
    if n > 0.9:
        warnings.warn(f"||G|V||| = {n:.3f} > 0.9: the Monte Carlo variance may be very large",
                      RuntimeWarning, stacklevel=2)
    x = np.exp(sampled_pairings(V, u, n_ensembles, seed, window))
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(len(x)))
    exact = laplace_functional(V, u)
    return {"empirical": mean, "se": se, "exact": exact,
            "z": (mean - exact) / se if se > 0 else 0.0}


def remainder(delta: float, eta, V, gf: GreenFunction | None = None) -> float:
    """``R = <|eta|, 1> ||gamma_V||^2 delta^2 c / (1 - delta c)``,
    ``c = ||(I - G|V|)^{-1} G|eta|||_inf``."""
    V = Potential.make(V, gf)
    eta = Potential.make(eta, V.gf, V.d)
    if delta == 0 or len(eta.points) == 0:
        return 0.0
    c = resolvent_norm(V, eta)
    den = 1.0 - delta * c
    if den <= 0:
        raise PreconditionError(f"delta * ||(I-G|V|)^-1 G|eta||| = {delta * c:.6g} >= 1")
    gam = gauge(V)
    return float(np.abs(eta.values).sum() * gam.sup**2 * delta**2 * c / den)


def remainder_series(delta: float, eta, V, n_terms: int = 500) -> dict:
    """Term-by-term sums behind the remainder.

    ``actual``: ``delta * sum_{n>=1} <eta gamma_V, (delta (I-GV)^{-1} G eta)^n gamma_V>``,
    the exact higher-order part of ``<V', gamma_{V'}>``.
    ``bound``: the geometric series ``delta sum_n <|eta|,1> ||gamma_V||^2 (delta c)^n``.
    """
    V = Potential.make(V)
    eta = Potential.make(eta, V.gf, V.d)
    S = joint_support(V, eta)
    G = V.gf.matrix(S)
    v, et = V.on(S), eta.on(S)
    I = np.eye(len(S))
    g = _gamma_on(S, v, G) if np.any(v) else np.ones(len(S))
    T = delta * linalg.solve(I - G * v[None, :], G * et[None, :])
    term = g.copy()
    actual = 0.0
    for _ in range(n_terms):
        term = T @ term
        inc = (et * g) @ term
        actual += inc
        if abs(inc) < 1e-18:
            break
    gam = gauge(V) if len(V.points) else None
    sup = gam.sup if gam is not None else 1.0
    c = resolvent_norm(V, eta, S)
    base = np.abs(et).sum() * sup**2
    bound = 0.0
    q = delta * c
    for n in range(1, n_terms + 1):
        inc = base * q**n
        bound += inc
        if inc < 1e-18:
            break
    return {"actual": delta * actual, "bound": delta * bound}


@dataclass
class BoundReport:
    bound: float
    remainder: float
    threshold: float
    dirichlet: float
    condition_1: float
    condition_2: float
    tail: float | None = None
    tail_lower_99: float | None = None
    n_mc: int = 0
    passed: bool | None = None


def corollary32_bound(V, eta, delta: float, u: float, t: float, n_mc: int = 0, seed: int = 0,
                      window=None) -> BoundReport:
    """The exponential tail bound for ``<L_u, V'>``, ``V' = V + delta eta``.

    ``P[<L_u, V'> >= u <V', gamma_V^2> + t] <= exp(-u E(gamma_V - 1) - t + u R)``.
    With ``n_mc > 0`` the tail is also estimated by sampling, and ``passed``
    records whether the one-sided 99% lower confidence limit of the tail
    stays below the bound.
    """
    V = Potential.make(V)
    eta = Potential.make(eta, V.gf, V.d)
    S = joint_support(V, eta)
    Vp = Potential.make((S, V.on(S) + delta * eta.on(S)), V.gf)
    _check_admissible(V, "V")
    c1 = _check_admissible(Vp, "V'")
    dW = Potential.make((S, delta * eta.on(S)), V.gf)
    c2 = resolvent_norm(V, dW, S) if len(dW.points) else 0.0
    if c2 >= 1.0:
        raise PreconditionError(f"||(I-G|V|)^-1 G|V'-V||| = {c2:.6g} >= 1")
    gam = gauge(V)
    R = remainder(delta, eta, V)
    E = gam.dirichlet
    threshold = u * float(Vp.values @ gam(Vp.points) ** 2) + t
    rep = BoundReport(bound=math.exp(-u * E - t + u * R), remainder=R, threshold=threshold,
                      dirichlet=E, condition_1=c1, condition_2=c2)
    if n_mc > 0:
        pair = sampled_pairings(Vp, u, n_mc, seed, window)
        k = int(np.sum(pair >= threshold))
        rep.tail = k / n_mc
        rep.tail_lower_99 = float(stats.beta.ppf(0.01, k, n_mc - k + 1)) if k > 0 else 0.0
        rep.n_mc = n_mc
        rep.passed = rep.tail_lower_99 <= rep.bound
    return rep


def random_admissible_pair(rng: np.random.Generator, side: int = 3, d: int = 3,
                           gf: GreenFunction | None = None, target: tuple = (0.2, 0.7),
                           perturb: float = 0.3) -> tuple[Potential, Potential]:
    """Random signed ``(V, V')`` on a ``side^d`` cube with both norms in ``target``
    and ``V' - V`` small enough for the explicit perturbation formula."""
    from .lattice import DiscreteBox

    S = DiscreteBox(np.zeros(d, dtype=np.int64), side).points()
    gf = _green_for(S, gf, d)
    G = gf.matrix(S)
    v = rng.uniform(-1, 1, len(S))
    v *= rng.uniform(*target) / np.max(G @ np.abs(v))
    w = rng.uniform(-1, 1, len(S))
    vp = v + perturb * rng.uniform(0.1, 1.0) * w * np.abs(v).max()
    norm_p = np.max(G @ np.abs(vp))
    if norm_p >= target[1]:
        vp *= target[1] / norm_p
    return Potential.make((S, v), gf), Potential.make((S, vp), gf)
