"""Discrete potential theory: the G operator, equilibrium measures, capacity,
harmonic potentials and the discrete Dirichlet form.

Finitely supported functions on Z^d are passed as a pair ``(points, values)``
or as a dict mapping coordinate tuples to values.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import linalg, sparse

from .errors import BudgetExceeded, PreconditionError, RilabError
from .green import GreenFunction, c_d, shared_green
from .lattice import (PointIndex, as_points, grid_points, inner_boundary, outer_boundary,
                      unique_points, unit_vectors)
from .rng import spawn_seeds

EXACT_LIMIT = 4096


def as_function(f, d: int | None = None):
    """Normalise a finitely supported function to ``(points, values)``."""
    if isinstance(f, dict):
        if not f:
            return np.zeros((0, d or 3), dtype=np.int64), np.zeros(0)
        pts = np.array(list(f.keys()), dtype=np.int64)
        vals = np.array(list(f.values()), dtype=float)
        return pts, vals
    pts, vals = f
    pts = as_points(pts, d)
    vals = np.broadcast_to(np.asarray(vals, dtype=float), (len(pts),)).copy()
    return pts, vals


def _green_for(points, gf: GreenFunction | None, d: int) -> GreenFunction:
    span = int(np.ptp(points, axis=0).max()) if len(points) else 0
    if gf is None:
        return shared_green(d, radius=max(span, 8))
    if gf.max_radius is None and span > gf.radius:
        return gf.ensure_radius(span)
    return gf


def apply_G(V, f, x, gf: GreenFunction | None = None) -> np.ndarray:
    """``(G V f)(x) = sum_y g(x - y) V(y) f(y)`` at the rows of ``x``.

    ``f`` is a callable on points or an array aligned with the support of V.
    """
    vp, vv = as_function(V)
    x = as_points(x)
    if len(vp) == 0:
        return np.zeros(len(x))
    fv = f(vp) if callable(f) else np.broadcast_to(np.asarray(f, float), vv.shape)
    gf = _green_for(np.concatenate([vp, x]), gf, vp.shape[1])
    return gf.matrix(x, vp) @ (vv * fv)


# ---------------------------------------------------------------------------
# equilibrium measures


@dataclass
class PotentialTable:
    """Equilibrium data of a finite set ``K``.

    ``e`` is aligned with ``K``; it vanishes off the inner boundary.
    """

    K: np.ndarray
    e: np.ndarray
    cap: float
    backend: str
    gf: GreenFunction = field(repr=False)
    stderr: np.ndarray | None = None
    bias_bound: float = 0.0
    solver_residual: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.K.shape[1]

    @property
    def e_bar(self) -> np.ndarray:
        return self.e / self.cap

    @property
    def support(self) -> np.ndarray:
        return self.e > 0

    def h(self, x) -> np.ndarray:
        """Harmonic potential ``h_K = G e_K`` at the rows of ``x`` (1 on K)."""
        x = as_points(x, self.d)
        sup = self.support
        pts, ev = self.K[sup], self.e[sup]
        gf = _green_for(np.concatenate([pts, x]), self.gf, self.d)
        out = np.empty(len(x))
        step = max(1, 4_000_000 // max(len(pts), 1))
        for lo in range(0, len(x), step):
            out[lo:lo + step] = gf.matrix(x[lo:lo + step], pts) @ ev
        inside = PointIndex(self.K).contains(x)
        out[inside] = 1.0
        return out

    def to_csv(self, path, query=None) -> None:
        """Write ``x, e_K(x)`` rows, plus ``h_K`` at optional query points."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            cols = [f"x{i + 1}" for i in range(self.d)]
            w.writerow(cols + ["e_K", "in_K", "h_K", "backend"])
            for p, v in zip(self.K, self.e):
                w.writerow(list(p) + [repr(float(v)), 1, 1.0, self.backend])
            if query is not None:
                query = as_points(query, self.d)
                inK = PointIndex(self.K).contains(query)
                hq = self.h(query)
                for p, flag, hv in zip(query, inK, hq):
                    if not flag:
                        w.writerow(list(p) + [0.0, 0, repr(float(hv)), self.backend])


def _cube_orbits(points: np.ndarray, anchor: np.ndarray, side: int):
    """Label points of a cube by their orbit under its symmetry group."""
    centred = 2 * points - (2 * anchor + side - 1)
    key = np.sort(np.abs(centred), axis=1)
    _, rep_idx, labels = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return rep_idx, labels.ravel()


def _detect_cube(K: np.ndarray):
    lo, hi = K.min(axis=0), K.max(axis=0)
    side = hi - lo + 1
    if np.all(side == side[0]) and len(K) == int(np.prod(side)):
        return lo, int(side[0])
    return None


def _exact_boundary_solve(bd: np.ndarray, gf: GreenFunction):
    Gbb = gf.matrix(bd)
    factor = linalg.cho_factor(Gbb, lower=True, check_finite=False)
    e = linalg.cho_solve(factor, np.ones(len(bd)), check_finite=False)
    resid = float(np.max(np.abs(Gbb @ e - 1.0)))
    return e, resid, factor


def _cube_symmetric_solve(bd: np.ndarray, anchor, side: int, gf: GreenFunction):
    rep_idx, labels = _cube_orbits(bd, anchor, side)
    n_orb = len(rep_idx)
    onehot = sparse.csr_matrix((np.ones(len(bd)), (np.arange(len(bd)), labels)),
                               shape=(len(bd), n_orb))
    A = np.empty((n_orb, n_orb))
    step = max(1, 2_000_000 // len(bd))
    for lo in range(0, n_orb, step):
        rows = gf.matrix(bd[rep_idx[lo:lo + step]], bd)
        A[lo:lo + step] = (onehot.T @ rows.T).T
    e_orb = linalg.solve(A, np.ones(n_orb))
    resid = float(np.max(np.abs(A @ e_orb - 1.0)))
    return e_orb[labels], resid


def equilibrium(K, backend: str = "auto", gf: GreenFunction | None = None,
                n_walks: int = 20000, rho: float | None = None, seed: int = 0,
                exact_limit: int = EXACT_LIMIT, budget: int | None = None,
                symmetric: bool = True) -> PotentialTable:
    """Equilibrium measure and capacity of a finite set.

    Parameters
    ----------
    K : array_like
        Distinct lattice points.
    backend : {"auto", "exact", "monte-carlo"}
        ``exact`` solves ``G e = 1`` restricted to the inner boundary of K
        (e_K vanishes on interior points and ``G e = 1`` on the interior
        follows from the maximum principle). Cubes use a symmetry-reduced
        system, so they stay exact well beyond ``exact_limit``. ``auto``
        switches to Monte Carlo above ``exact_limit`` boundary points.
    n_walks, rho, seed, budget
        Monte Carlo escape-walk parameters. ``rho`` defaults to
        ``8 diam(K) + 64`` around the centre of K.
    symmetric : bool
        Allow the cube symmetry reduction.
    """
    K = unique_points(K)
    if len(K) == 0:
        raise PreconditionError("K must be nonempty")
    d = K.shape[1]
    bmask = inner_boundary(K)
    bd = K[bmask]
    cube = _detect_cube(K) if symmetric else None
    if backend == "auto":
        backend = "exact" if (len(bd) <= exact_limit or cube is not None) else "monte-carlo"

    if backend == "exact":
        gf = _green_for(K, gf, d)
        factor = None
        if cube is not None and len(bd) > 512:
            eb, resid = _cube_symmetric_solve(bd, cube[0], cube[1], gf)
            method = "cube-symmetric"
        else:
            if len(bd) > max(exact_limit, 1):
                raise BudgetExceeded(f"exact solve on {len(bd)} boundary points exceeds {exact_limit}")
            eb, resid, factor = _exact_boundary_solve(bd, gf)
            method = "boundary-cholesky"
        if np.any(eb < -1e-12):
            raise RilabError("negative equilibrium mass from the exact solve")
        e = np.zeros(len(K))
        e[bmask] = np.maximum(eb, 0.0)
        return PotentialTable(K=K, e=e, cap=float(e.sum()), backend="exact", gf=gf,
                              solver_residual=resid,
                              info={"method": method, "factor": factor, "boundary": bmask})

    if backend == "monte-carlo":
        return _equilibrium_mc(K, bmask, gf, n_walks, rho, seed, budget)
    raise PreconditionError(f"unknown backend {backend!r}")


@numba.njit(cache=True, parallel=True)
def _escape_kernel(starts, n_walks, grid, lo, shape, centre, rho, seeds, max_steps):
    n, d = starts.shape
    escapes = np.zeros(n, dtype=np.int64)
    stalled = np.zeros(n, dtype=np.int64)
    for i in numba.prange(n):
        np.random.seed(seeds[i])
        count = 0
        stall = 0
        for _ in range(n_walks):
            x = starts[i].copy()
            steps = 0
            while True:
                k = np.random.randint(0, 2 * d)
                x[k // 2] += 1 - 2 * (k % 2)
                steps += 1
                far = 0
                for j in range(d):
                    if abs(x[j] - centre[j]) > rho:
                        far = 1
                if far:
                    count += 1
                    break
                inbox = 1
                flat = 0
                for j in range(d):
                    r = x[j] - lo[j]
                    if r < 0 or r >= shape[j]:
                        inbox = 0
                        break
                    flat = flat * shape[j] + r
                if inbox and grid[flat]:
                    break
                if steps >= max_steps:
                    stall += 1
                    break
        escapes[i] = count
        stalled[i] = stall
    return escapes, stalled


def _equilibrium_mc(K, bmask, gf, n_walks, rho, seed, budget) -> PotentialTable:
    d = K.shape[1]
    lo, hi = K.min(axis=0), K.max(axis=0)
    diam = float(np.max(hi - lo))
    centre = (lo + hi) // 2
    if rho is None:
        rho = 8 * diam + 64
    radius_K = float(np.max(np.maximum(hi - centre, centre - lo)))
    if rho <= radius_K + 1:
        raise PreconditionError("truncation radius must exceed the extent of K")
    bd = K[bmask]
    total = len(bd) * n_walks
    if budget is not None and total > budget:
        raise BudgetExceeded(f"{total} escape walks exceed the budget {budget}")
    shape = (hi - lo + 1).astype(np.int64)
    grid = np.zeros(int(np.prod(shape)), dtype=np.uint8)
    strides = np.array([int(np.prod(shape[i + 1:])) for i in range(d)])
    grid[(K - lo) @ strides] = 1
    seeds = spawn_seeds(seed, len(bd))
    max_steps = int(50 * rho**2)
    esc, stalled = _escape_kernel(bd, n_walks, grid, lo, shape, centre, int(rho), seeds, max_steps)
    p = esc / n_walks
    e = np.zeros(len(K))
    e[bmask] = p
    se = np.zeros(len(K))
    se[bmask] = np.sqrt(p * (1 - p) / n_walks)
    cap = float(e.sum())
    # escaping to radius rho overestimates escape to infinity by at most the
    # chance of coming back from there
    dist = rho - radius_K
    bias = cap * c_d(d) * d / dist ** (d - 2)
    gf = _green_for(K, gf, d)
    return PotentialTable(K=K, e=e, cap=cap, backend="monte-carlo", gf=gf, stderr=se,
                          bias_bound=float(bias),
                          info={"rho": rho, "n_walks": n_walks, "seed": seed,
                                "cap_stderr": float(np.sqrt(np.sum(se**2))),
                                "stalled": int(stalled.sum()), "boundary": bmask})


def capacity(K, **kwargs) -> float:
    return equilibrium(K, **kwargs).cap


# ---------------------------------------------------------------------------
# Dirichlet forms


def dirichlet_form(f, g=None, d: int | None = None) -> float:
    """Discrete Dirichlet form ``(1/4d) sum_{x~y} (f(y)-f(x)) (g(y)-g(x))``.

    The sum runs over ordered neighbour pairs, so each edge counts twice.
    Both arguments are finitely supported.
    """
    fp, fv = as_function(f, d)
    gp, gv = (fp, fv) if g is None else as_function(g, fp.shape[1])
    d = fp.shape[1]
    supp = unique_points(np.concatenate([fp, gp]))
    if len(supp) == 0:
        return 0.0
    pts = np.concatenate([supp, outer_boundary(supp)])
    idx = PointIndex(pts, pad=1)
    F = np.zeros(len(pts))
    Gv = np.zeros(len(pts))
    np.add.at(F, idx.lookup(fp), fv)
    np.add.at(Gv, idx.lookup(gp), gv)
    total = 0.0
    for step in unit_vectors(d):
        j = idx.lookup(pts + step)
        ok = j >= 0
        total += np.sum((F[j[ok]] - F[ok]) * (Gv[j[ok]] - Gv[ok]))
    return float(total / (4 * d))


def grid_dirichlet_form(values: np.ndarray) -> float:
    """Dirichlet form of a function given on a full grid, zero outside it."""
    d = values.ndim
    padded = np.pad(values, 1)
    total = 0.0
    for ax in range(d):
        total += 2 * np.sum(np.diff(padded, axis=ax) ** 2)
    return float(total / (4 * d))


def potential_energy(mu, gf: GreenFunction | None = None, pad: int = 2) -> dict:
    """Dirichlet energy of ``f = G mu`` by two routes.

    ``window``: edge sum over a box around supp(mu), with the exterior handled
    exactly by Green's identity (f is harmonic outside the box and decays),
    ``E = (1/2d) [ sum_inner edges (df)^2 + sum_crossing f_in (f_in - f_out) ]``.
    ``pairing``: ``<mu, G mu>``.
    """
    mp, mv = as_function(mu)
    d = mp.shape[1]
    lo, hi = mp.min(axis=0) - pad, mp.max(axis=0) + pad
    W = grid_points(lo, hi)
    outer = outer_boundary(W)
    gf = _green_for(np.concatenate([W, outer]), gf, d)
    fW = gf.matrix(W, mp) @ mv
    fO = gf.matrix(outer, mp) @ mv
    shape = tuple(hi - lo + 1)
    grid = fW.reshape(shape)
    inner = sum(np.sum(np.diff(grid, axis=ax) ** 2) for ax in range(d))
    idxO = PointIndex(outer)
    cross = 0.0
    for ax in range(d):
        for side, sgn in ((0, -1), (-1, 1)):
            sl = [slice(None)] * d
            sl[ax] = side
            face_pts = W.reshape(shape + (d,))[tuple(sl)].reshape(-1, d)
            face_vals = grid[tuple(sl)].ravel()
            step = np.zeros(d, dtype=np.int64)
            step[ax] = sgn
            fo = fO[idxO.lookup(face_pts + step)]
            cross += np.sum(face_vals * (face_vals - fo))
    window = float((inner + cross) / (2 * d))
    pairing = float(mv @ (gf.matrix(mp) @ mv))
    return {"window": window, "pairing": pairing}
