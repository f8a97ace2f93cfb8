"""Green function of the continuous-time simple random walk on Z^d.

The walk jumps at rate one to a uniformly chosen neighbour, so the Green
function equals the discrete-time expected number of visits,

    g(x) = int_0^inf prod_i exp(-t/d) I_{x_i}(t/d) dt,

with I_n the modified Bessel function. The integral is evaluated by composite
Gauss-Legendre panels in log t up to a cutoff T, and the tail beyond T by
integrating the large-argument expansion of the Bessel factors term by term.

A second, independent route solves the lattice Poisson equation on a finite
box with boundary data from the asymptotic ``C_d |x|^{2-d}``.
"""

from __future__ import annotations

import hashlib
import itertools
import math
import os
from pathlib import Path

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import ive

from .errors import GreenRadiusError, PreconditionError, ToleranceNotReached
from .lattice import check_dim

DEFAULT_TOL = 1e-8
_S_MIN = -40.0
_SERIES_ORDER = 4


def c_d(d: int) -> float:
    """Asymptotic constant: ``g(x) ~ C_d |x|^{2-d}``."""
    check_dim(d)
    return d / (2 * math.pi ** (d / 2)) * math.gamma(d / 2 - 1)


def _series_coeffs(n: np.ndarray, order: int) -> np.ndarray:
    """Coefficients ``c_k(n)`` of ive(n, z) ~ (2 pi z)^{-1/2} sum_k c_k z^{-k}."""
    mu = 4.0 * np.asarray(n, dtype=float) ** 2
    coeffs = [np.ones_like(mu)]
    num = np.ones_like(mu)
    for k in range(1, order + 1):
        num = num * (mu - (2 * k - 1) ** 2)
        coeffs.append((-1) ** k * num / (math.factorial(k) * 8.0**k))
    return np.array(coeffs)


def _nodes(d: int, panel: float, m: int, z_cut: float):
    s_max = math.log(z_cut * d)
    npan = int(math.ceil((s_max - _S_MIN) / panel))
    edges = np.linspace(_S_MIN, s_max, npan + 1)
    gx, gw = np.polynomial.legendre.leggauss(m)
    a, b = edges[:-1, None], edges[1:, None]
    s = (0.5 * (b - a) * gx + 0.5 * (a + b)).ravel()
    ws = (0.5 * (b - a) * gw).ravel()
    t = np.exp(s)
    return t, ws * t


def _bessel_green(xabs: np.ndarray, d: int, panel: float, m: int, chunk: int = 4096) -> np.ndarray:
    """Quadrature of the Bessel integral for nonnegative integer rows ``xabs``."""
    nmax = int(xabs.max()) if xabs.size else 0
    # tail expansion needs z_cut >> nmax^2
    z_cut = max(1e8, 1e3 * (nmax + 1) ** 2)
    t, w = _nodes(d, panel, m, z_cut)
    table = ive(np.arange(nmax + 1)[:, None], t[None, :] / d)
    coeffs = _series_coeffs(np.arange(nmax + 1), _SERIES_ORDER)
    k = np.arange(_SERIES_ORDER + 1)
    tail_int = d * (2 * np.pi) ** (-d / 2) * z_cut ** (1 - d / 2 - k) / (d / 2 + k - 1)

    out = np.empty(len(xabs))
    for lo in range(0, len(xabs), chunk):
        x = xabs[lo:lo + chunk]
        prod = np.ones((len(x), t.size))
        for i in range(d):
            prod *= table[x[:, i]]
        val = prod @ w
        # product of the per-coordinate series, truncated at the same order
        poly = np.zeros((len(x), _SERIES_ORDER + 1))
        poly[:, 0] = 1.0
        for i in range(d):
            ci = coeffs[:, x[:, i]].T
            new = np.zeros_like(poly)
            for a in range(_SERIES_ORDER + 1):
                for b in range(_SERIES_ORDER + 1 - a):
                    new[:, a + b] += poly[:, a] * ci[:, b]
            poly = new
        out[lo:lo + chunk] = val + poly @ tail_int
    return out


def green_quadrature(x, d: int, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Green function at the rows of ``x`` by Bessel quadrature.

    Two node sets are compared; if they disagree by more than ``tol``
    (relative) the finer one is refined once more before giving up.
    """
    check_dim(d)
    xabs = np.abs(np.atleast_2d(np.asarray(x, dtype=np.int64)))
    if xabs.shape[1] != d:
        raise PreconditionError(f"expected difference vectors of dimension {d}")
    coarse = _bessel_green(xabs, d, panel=1.0, m=10)
    fine = _bessel_green(xabs, d, panel=1.0, m=14)
    err = np.max(np.abs(fine - coarse) / fine)
    if err > tol:
        finer = _bessel_green(xabs, d, panel=0.5, m=16)
        err = np.max(np.abs(finer - fine) / finer)
        fine = finer
        if err > tol:
            raise ToleranceNotReached(f"Green quadrature stalled at relative error {err:.2e}")
    return fine


def green_truncated_solve(x, d: int, radius: int = 24) -> tuple[np.ndarray, float]:
    """Green function by solving the lattice equation on a finite box.

    Solves ``(1/2d) sum_{y~x} g(y) - g(x) = -delta_0(x)`` on ``B(0, radius)``
    with ``g = C_d |x|^{2-d}`` on the outer boundary. Returns values and an
    error estimate from the change between ``radius`` and ``3*radius/4``.
    """
    from scipy.sparse import diags, identity
    from scipy.sparse.linalg import cg

    check_dim(d)
    xabs = np.abs(np.atleast_2d(np.asarray(x, dtype=np.int64)))
    if np.any(xabs.max(axis=1) >= radius // 2):
        raise GreenRadiusError("query point too close to the truncation boundary")

    def solve(r):
        n = 2 * r + 1
        shape = (n,) * d
        size = n**d
        lap = identity(size, format="csr") * 1.0
        rhs = np.zeros(size)
        coords = np.indices(shape).reshape(d, -1).T - r
        strides = np.array([n ** (d - 1 - i) for i in range(d)])
        offdiag = []
        for i in range(d):
            for sgn in (1, -1):
                nb = coords.copy()
                nb[:, i] += sgn
                inside = np.abs(nb[:, i]) <= r
                vals = np.where(inside, -1.0 / (2 * d), 0.0)
                offdiag.append((sgn * strides[i], vals))
                # boundary contribution moves to the right-hand side
                out = ~inside
                bnd = nb[out].astype(float)
                rhs[out] += c_d(d) / (2 * d) * np.linalg.norm(bnd, axis=1) ** (2 - d)
        for off, vals in offdiag:
            # diags wants the diagonal aligned with the row index
            if off > 0:
                lap = lap + diags(vals[:-off], off, shape=(size, size))
            else:
                lap = lap + diags(vals[-off:], off, shape=(size, size))
        centre = int(np.sum(r * strides))
        rhs[centre] += 1.0
        sol, info = cg(lap.tocsr(), rhs, rtol=1e-13, maxiter=20000)
        if info != 0:
            raise ToleranceNotReached("conjugate gradient did not converge")
        flat = (xabs + r) @ strides
        return sol[flat]

    full = solve(radius)
    part = solve((3 * radius) // 4)
    return full, float(np.max(np.abs(full - part) / full))


def green(d: int, x, tol: float = DEFAULT_TOL, method: str = "quadrature"):
    """Green function ``g(x)`` of the walk on Z^d.

    Parameters
    ----------
    d : int
        Dimension, at least 3.
    x : array_like
        A difference vector or an ``(n, d)`` array of them.
    tol : float
        Requested relative accuracy.
    method : {"quadrature", "truncated-solve"}

    Returns
    -------
    float or ndarray
    """
    arr = np.asarray(x, dtype=np.int64)
    single = arr.ndim == 1
    if method == "quadrature":
        vals = green_quadrature(arr, d, tol)
    elif method == "truncated-solve":
        radius = max(24, 4 * int(np.abs(np.atleast_2d(arr)).max()) + 8)
        vals, err = green_truncated_solve(arr, d, radius)
        if err > tol:
            raise ToleranceNotReached(
                f"truncated solve reached only {err:.1e} relative accuracy (requested {tol:.1e})"
            )
    else:
        raise PreconditionError(f"unknown Green method {method!r}")
    return float(vals[0]) if single else vals


def _cache_dir() -> Path:
    root = os.environ.get("RILAB_CACHE")
    return Path(root) if root else Path.home() / ".cache" / "rilab"


class GreenFunction:
    """Tabulated Green function on ``|x|_inf <= radius``.

    Values are stored in a dense ``(radius+1)^d`` array indexed by the absolute
    coordinates, which is all the symmetry of g that lookups need. Queries
    beyond the table fall back to quadrature unless ``max_radius`` is set, in
    which case they raise :class:`GreenRadiusError`.
    """

    def __init__(self, d: int, radius: int = 16, tol: float = DEFAULT_TOL,
                 max_radius: int | None = None, cache: bool = True):
        self.d = check_dim(d)
        self.radius = int(radius)
        self.tol = tol
        self.max_radius = max_radius
        self.method = "quadrature"
        self.table = self._load_or_build(cache)

    @property
    def g0(self) -> float:
        return float(self.table[(0,) * self.d])

    def _key(self) -> str:
        tag = f"green-d{self.d}-r{self.radius}-tol{self.tol:.0e}"
        return tag + "-" + hashlib.sha1(tag.encode()).hexdigest()[:8]

    def _load_or_build(self, cache: bool) -> np.ndarray:
        path = _cache_dir() / f"{self._key()}.npz"
        if cache and path.exists():
            with np.load(path) as data:
                table = data["table"]
            if table.shape == (self.radius + 1,) * self.d:
                return table
        table = self._build()
        if cache:
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(f".{os.getpid()}.tmp.npz")
                np.savez(tmp, table=table, d=self.d, radius=self.radius, tol=self.tol)
                os.replace(tmp, path)
            except OSError:
                pass
        return table

    def _build(self) -> np.ndarray:
        d, r = self.d, self.radius
        # evaluate on sorted coordinates only, then scatter to all permutations
        reps = np.array(list(itertools.combinations_with_replacement(range(r + 1), d)),
                        dtype=np.int64)
        vals = green_quadrature(reps, d, self.tol)
        table = np.empty((r + 1,) * d)
        for perm in itertools.permutations(range(d)):
            table[tuple(reps[:, p] for p in perm)] = vals
        return table

    def __call__(self, x) -> np.ndarray:
        """Green function at the rows of ``x`` (differences)."""
        x = np.abs(np.asarray(x, dtype=np.int64))
        single = x.ndim == 1
        x = np.atleast_2d(x)
        far = x.max(axis=1) > self.radius if len(x) else np.zeros(0, bool)
        out = np.empty(len(x))
        near = ~far
        out[near] = self.table[tuple(x[near].T)]
        if np.any(far):
            if self.max_radius is not None and x[far].max() > self.max_radius:
                raise GreenRadiusError(
                    f"difference {x[far].max()} exceeds the table radius {self.max_radius}"
                )
            out[far] = green_quadrature(x[far], self.d, self.tol)
        return float(out[0]) if single else out

    def matrix(self, P, Q=None) -> np.ndarray:
        """Kernel matrix ``g(P_i - Q_j)``."""
        P = np.atleast_2d(np.asarray(P, dtype=np.int64))
        Q = P if Q is None else np.atleast_2d(np.asarray(Q, dtype=np.int64))
        out = np.empty((len(P), len(Q)))
        if not out.size:
            return out
        span = max(np.ptp(np.concatenate([P, Q]), axis=0).max(), 0)
        flat = self.table.ravel()
        strides = (self.radius + 1) ** np.arange(self.d - 1, -1, -1)
        step = max(1, 2_000_000 // max(len(Q), 1))
        for lo in range(0, len(P), step):
            diff = np.abs(P[lo:lo + step, None, :] - Q[None, :, :])
            if span <= self.radius:
                out[lo:lo + step] = flat[diff @ strides]
            else:
                out[lo:lo + step] = self(diff.reshape(-1, self.d)).reshape(diff.shape[:2])
        return out

    def ensure_radius(self, r: int) -> "GreenFunction":
        """Return a table covering radius ``r`` (self if already large enough)."""
        if r <= self.radius:
            return self
        return GreenFunction(self.d, radius=int(r), tol=self.tol, max_radius=self.max_radius)


_SHARED: dict = {}


def shared_green(d: int, radius: int = 16, tol: float = DEFAULT_TOL) -> GreenFunction:
    """Process-wide memoised table of at least the requested radius."""
    key = (d, tol)
    gf = _SHARED.get(key)
    if gf is None or gf.radius < radius:
        gf = GreenFunction(d, radius=max(radius, gf.radius if gf else 0), tol=tol)
        _SHARED[key] = gf
    return gf


def brownian_green(r, d: int) -> np.ndarray:
    """Green function of Brownian motion (generator Delta/2) at distance ``r``."""
    r = np.asarray(r, dtype=float)
    return gamma_fn(d / 2 - 1) / (2 * np.pi ** (d / 2)) * r ** (2.0 - d)
