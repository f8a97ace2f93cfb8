"""Brownian potential theory: harmonic potentials, capacities and the
entropic-repulsion profile.

Normalisation: Brownian motion has generator Delta/2 and the Dirichlet form is
``E(f) = 1/2 int |grad f|^2``, so a ball of radius r in d=3 has capacity 2 pi r.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy import integrate

from .errors import PreconditionError, ToleranceNotReached
from .green import brownian_green
from .lattice import Ball, Box, BoxUnion, CompactSetSpec
from .potential import PotentialTable, equilibrium
from .rng import generator


def sphere_area(d: int) -> float:
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def ball_capacity(r: float, d: int) -> float:
    """``cap(B(0, r)) = 2 pi^{d/2} r^{d-2} / Gamma(d/2 - 1)``."""
    return 2 * math.pi ** (d / 2) * r ** (d - 2) / math.gamma(d / 2 - 1)


@lru_cache(maxsize=1)
def golden_values() -> dict:
    text = resources.files("rilab").joinpath("data/golden_capacities.json").read_text()
    return json.loads(text)


def unit_cube_capacity(d: int = 3) -> float:
    """Golden capacity of ``[0, 1]^d`` (only d = 3 is tabulated)."""
    key = f"unit_cube_d{d}"
    table = golden_values()
    if key not in table:
        raise PreconditionError(f"no golden cube capacity for d={d}")
    return float(table[key]["capacity"])


# ---------------------------------------------------------------------------
# harmonic potential


def _uniform_sphere(rng, n: int, d: int) -> np.ndarray:
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _exterior_entry(rng, x: np.ndarray, centre: np.ndarray, R: float) -> np.ndarray:
    """Sample where Brownian motion from ``x`` (outside the sphere) first hits it,
    given that it does. The density on the sphere is proportional to
    ``|x - xi|^{-d}``; sampled by rejection from the uniform law."""
    n, d = x.shape
    out = np.empty_like(x)
    todo = np.arange(n)
    dmin = np.linalg.norm(x - centre, axis=1) - R
    while todo.size:
        xi = centre + R * _uniform_sphere(rng, todo.size, d)
        dist = np.linalg.norm(x[todo] - xi, axis=1)
        ok = rng.random(todo.size) < (dmin[todo] / dist) ** d
        out[todo[ok]] = xi[ok]
        todo = todo[~ok]
    return out


def wos_hitting(B: CompactSetSpec, z, n_samples: int = 20000, seed: int = 0,
                eps: float | None = None, max_steps: int = 10000) -> tuple[float, float]:
    """Walk-on-spheres estimate of ``W_z[H_B < inf]`` with its standard error.

    Walkers are absorbed within ``eps`` of B. Beyond twice the radius of a
    sphere enclosing B a walker returns with probability ``(R/|x|)^{d-2}``,
    landing on the sphere according to the exterior harmonic measure.
    """
    z = np.asarray(z, dtype=float).ravel()
    if B.contains(z[None])[0]:
        return 1.0, 0.0
    starts = np.repeat(z[None], n_samples, axis=0)
    hits = _wos_indicators(B, starts, seed, eps=eps, max_steps=max_steps)
    p = hits.mean()
    return float(p), float(np.sqrt(max(p * (1 - p), 1e-300) / n_samples))


def harmonic_potential(B: CompactSetSpec, z, method: str = "auto", tol: float = 1e-2,
                       seed: int = 0, N: int | None = None) -> dict:
    """Brownian harmonic potential ``h_B(z) = W_z[H_B < inf]``.

    Returns a dict with ``value`` and ``error`` (a standard error for WoS, a
    bias estimate for the discrete limit, zero for the exact ball formula).
    """
    z = np.asarray(z, dtype=float).ravel()
    if B.contains(z[None])[0]:
        return {"value": 1.0, "error": 0.0, "method": "inside"}
    if method == "auto":
        method = "exact-ball" if isinstance(B, Ball) else "walk-on-spheres"
    if method == "exact-ball":
        if not isinstance(B, Ball):
            raise PreconditionError("exact-ball is only available for balls")
        r = np.linalg.norm(z - B.center)
        return {"value": float((B.radius / r) ** (B.d - 2)), "error": 0.0, "method": method}
    if method == "walk-on-spheres":
        n = int(min(max(0.25 / tol**2, 1000), 2_000_000))
        p, se = wos_hitting(B, z, n_samples=n, seed=seed)
        return {"value": p, "error": se, "method": method, "samples": n}
    if method == "discrete-limit":
        N = N or 16
        vals = []
        for n in (N // 2, N):
            pts = B.lattice_points(n)
            table = equilibrium(pts)
            vals.append(float(table.h(np.floor(n * z).astype(np.int64)[None])[0]))
        return {"value": vals[-1], "error": abs(vals[-1] - vals[0]), "method": method, "N": N}
    raise PreconditionError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# capacity


def _ball_energy(r: float, d: int) -> float:
    # E(h) = 1/2 |S^{d-1}| int_r^inf |h'(s)|^2 s^{d-1} ds with h = (r/s)^{d-2}
    def integrand(s):
        return ((d - 2) * r ** (d - 2) * s ** (1 - d)) ** 2 * s ** (d - 1)

    val, _ = integrate.quad(integrand, r, np.inf, epsabs=0, epsrel=1e-12)
    return 0.5 * sphere_area(d) * val


def discrete_limit_capacity(B: CompactSetSpec, Ns=(8, 10, 12, 14, 16), order: int = 2) -> dict:
    """Fit ``d cap_Z(B_N) / N^{d-2}`` by a polynomial in 1/N and report the intercept."""
    d = B.d
    Ns = np.array(sorted(Ns), dtype=float)
    vals = np.array([d * equilibrium(B.lattice_points(int(n))).cap / n ** (d - 2) for n in Ns])
    order = min(order, len(Ns) - 1)
    A = np.vander(1 / Ns, order + 1, increasing=True)
    coef = np.linalg.lstsq(A, vals, rcond=None)[0]
    lower = np.linalg.lstsq(A[:, :order], vals, rcond=None)[0] if order > 1 else coef
    return {"value": float(coef[0]), "error": float(abs(coef[0] - lower[0])),
            "N": Ns.astype(int).tolist(), "raw": vals.tolist()}


def wos_capacity(B: CompactSetSpec, n_samples: int = 20000, seed: int = 0) -> dict:
    """``cap(B) = avg_{S_rho} h_B / G(rho)`` for a sphere S_rho enclosing B.

    Exact by the mean-value property of the equilibrium potential; the
    average is estimated by walk-on-spheres from uniform points on S_rho.
    """
    d = B.d
    lo, hi = B.bounds()
    centre = 0.5 * (lo + hi)
    rho = float(np.linalg.norm(hi - lo))
    rng = generator(seed, 12)
    starts = centre + rho * _uniform_sphere(rng, n_samples, d)
    # one walker per start point: the hit indicator averages to the sphere mean
    hits = np.zeros(n_samples)
    block = 2000
    for i, lo_i in enumerate(range(0, n_samples, block)):
        pts = starts[lo_i:lo_i + block]
        hits[lo_i:lo_i + block] = _wos_indicators(B, pts, seed + 7919 * (i + 1))
    p = hits.mean()
    se = hits.std(ddof=1) / np.sqrt(n_samples)
    g = float(brownian_green(rho, d))
    return {"value": float(p / g), "error": float(se / g), "rho": rho}


def _wos_indicators(B: CompactSetSpec, starts: np.ndarray, seed: int,
                    eps: float | None = None, max_steps: int = 10000):
    """Hit indicators of single walk-on-spheres walkers started at each row."""
    n, d = starts.shape
    lo, hi = B.bounds()
    centre = 0.5 * (lo + hi)
    R = 0.5 * float(np.linalg.norm(hi - lo)) + 1e-9
    if eps is None:
        eps = 1e-4 * B.diameter()
    rng = generator(seed, 13)
    x = starts.astype(float).copy()
    alive = np.ones(n, dtype=bool)
    hit = B.contains(x)
    alive &= ~hit
    for _ in range(max_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            return hit.astype(float)
        xs = x[idx]
        dist = B.distance(xs)
        absorbed = dist < eps
        hit[idx[absorbed]] = True
        alive[idx[absorbed]] = False
        idx, xs, dist = idx[~absorbed], xs[~absorbed], dist[~absorbed]
        r = np.linalg.norm(xs - centre, axis=1)
        far = r > 2 * R
        if np.any(far):
            fi = idx[far]
            back = rng.random(fi.size) < (R / r[far]) ** (d - 2)
            alive[fi[~back]] = False
            x[fi[back]] = _exterior_entry(rng, xs[far][back], centre, R)
        near = idx[~far]
        x[near] = xs[~far] + dist[~far, None] * _uniform_sphere(rng, near.size, d)
    raise ToleranceNotReached("walk-on-spheres exceeded its step budget")


def brownian_capacity(B: CompactSetSpec, method: str = "auto", tol: float = 1e-3,
                      **kwargs) -> dict:
    """Brownian capacity of a ball, box or union of boxes.

    Methods
    -------
    scaling
        Balls in closed form; cubes from the golden unit-cube value times
        ``side^{d-2}`` (translation invariance and ``cap(aD) = a^{d-2} cap(D)``).
    dirichlet-energy
        Numerical energy ``E(h_B, h_B)`` of the radial potential (balls).
    discrete-limit
        Extrapolation of ``d cap_Z(B_N) / N^{d-2}``.
    walk-on-spheres
        Sphere-average identity with walk-on-spheres hitting estimates.
    """
    d = B.d
    if method == "auto":
        method = "scaling" if _is_ball_or_cube(B) else "discrete-limit"
    if method == "scaling":
        if isinstance(B, Ball):
            return {"value": ball_capacity(B.radius, d), "error": 0.0, "method": method}
        cube = _cube_side(B)
        if cube is None:
            raise PreconditionError("scaling method needs a ball or a cube")
        return {"value": unit_cube_capacity(d) * cube ** (d - 2),
                "error": golden_values()[f"unit_cube_d{d}"]["uncertainty"] * cube ** (d - 2),
                "method": method}
    if method == "dirichlet-energy":
        if not isinstance(B, Ball):
            raise PreconditionError("dirichlet-energy is implemented for balls")
        return {"value": _ball_energy(B.radius, d), "error": 0.0, "method": method}
    if method == "discrete-limit":
        res = discrete_limit_capacity(B, **kwargs)
        res["method"] = method
        if res["error"] > tol * abs(res["value"]):
            res["warning"] = f"extrapolation spread {res['error']:.2e} exceeds tol"
        return res
    if method == "walk-on-spheres":
        res = wos_capacity(B, **kwargs)
        res["method"] = method
        return res
    raise PreconditionError(f"unknown capacity method {method!r}")


def _cube_side(B) -> float | None:
    if isinstance(B, Box):
        s = B.upper - B.lower
        if np.allclose(s, s[0]):
            return float(s[0])
    if isinstance(B, BoxUnion) and len(B.boxes) == 1:
        return _cube_side(B.boxes[0])
    return None


def _is_ball_or_cube(B) -> bool:
    return isinstance(B, Ball) or _cube_side(B) is not None


# ---------------------------------------------------------------------------
# profile


def profile(u: float, u_bar: float, potential) -> np.ndarray:
    """``(sqrt(u) + (sqrt(u_bar) - sqrt(u)) * potential)^2``."""
    if not 0 < u < u_bar:
        raise PreconditionError(f"need 0 < u < u_bar, got u={u}, u_bar={u_bar}")
    p = np.asarray(potential, dtype=float)
    return (math.sqrt(u) + (math.sqrt(u_bar) - math.sqrt(u)) * p) ** 2


@dataclass
class ProfileField:
    """The profile ``M^u`` built on a continuum set or a discrete set.

    ``base`` is a :class:`CompactSetSpec` (continuum potential) or a
    :class:`PotentialTable` (discrete potential ``h_C``). Continuum potentials
    of non-balls use the discrete potential of ``base_N`` at resolution
    ``N_ref`` as their evaluator.
    """

    u: float
    u_bar: float
    base: object
    N_ref: int = 24

    def __post_init__(self):
        profile(self.u, self.u_bar, 0.0)
        self._table = None

    def potential(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if isinstance(self.base, PotentialTable):
            return self.base.h(np.rint(x).astype(np.int64))
        B = self.base
        if isinstance(B, Ball):
            r = np.linalg.norm(x - B.center, axis=1)
            out = np.ones(len(x))
            outside = r > B.radius
            out[outside] = (B.radius / r[outside]) ** (B.d - 2)
            return out
        if self._table is None:
            self._table = equilibrium(B.lattice_points(self.N_ref))
        out = self._table.h(np.rint(self.N_ref * x).astype(np.int64))
        out[B.contains(x)] = 1.0
        return out

    def __call__(self, x) -> np.ndarray:
        return profile(self.u, self.u_bar, self.potential(x))
