"""Random interlacements restricted to a finite window.

The number of trajectories hitting a window W at level u_max is
Poisson(u_max cap(W)); each starts from the normalised equilibrium measure of
W and carries an independent uniform label in (0, u_max]. Only the forward part
of each trajectory is simulated: the backward part is conditioned never to
return to W, so it contributes nothing inside W.

Each forward walk is followed step by step while it is in W. When it steps
out of W to a site y of the outer boundary, two truncations are available:

``exact``
    the probability of ever coming back and the re-entry point are drawn from
    the exact hitting distribution ``H(y, x) = P_y[X_{H_W} = x, H_W < inf]``,
    computed once per window as ``G_{out,in} G_{in,in}^{-1}``;
``radius``
    the walk is followed outside W and killed when it leaves the sup-norm
    ball of radius ``rho`` around the window centre.

Sites are stored as indices into the window (``>= 0``) or into its outer
boundary (``-2 - k``); holding times are drawn only for sites in W.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy import linalg

from .errors import PreconditionError
from .lattice import PointIndex, as_points, inner_boundary, outer_boundary, unique_points
from .potential import PotentialTable, equilibrium
from .rng import generator, spawn_seeds

EXACT_TRUNCATION_LIMIT = 6000


@dataclass
class Window:
    """Precomputed data for sampling in a window ``W``."""

    points: np.ndarray
    potential: PotentialTable
    truncation: str
    rho: float
    outer: np.ndarray
    inner_idx: np.ndarray
    grid: np.ndarray = field(repr=False)
    grid_lo: np.ndarray = field(repr=False)
    grid_shape: np.ndarray = field(repr=False)
    centre: np.ndarray = field(repr=False)
    return_prob: np.ndarray = field(repr=False)
    cum_hit: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def cap(self) -> float:
        return self.potential.cap

    def index(self) -> PointIndex:
        return PointIndex(self.points)

    def diameter(self) -> int:
        return int(np.ptp(self.points, axis=0).max())


def prepare_window(W, potential: PotentialTable | None = None, truncation: str = "exact",
                   rho: float | None = None) -> Window:
    """Build the lookup grid, equilibrium data and re-entry kernel of ``W``.

    Parameters
    ----------
    W : array_like
        Window points.
    potential : PotentialTable, optional
        Equilibrium data of ``W``; computed when omitted.
    truncation : {"exact", "radius"}
    rho : float, optional
        Killing radius for ``radius`` truncation (default twice the diameter).
    """
    W = unique_points(W)
    d = W.shape[1]
    if potential is None:
        potential = equilibrium(W)
    elif len(potential.K) != len(W) or not np.array_equal(unique_points(potential.K), W):
        raise PreconditionError("potential table does not belong to this window")
    # align e with the sorted window
    e = np.zeros(len(W))
    e[PointIndex(W).lookup(potential.K)] = potential.e
    potential = replace(potential, K=W, e=e)

    outer = outer_boundary(W)
    lo = W.min(axis=0) - 1
    shape = W.max(axis=0) + 1 - lo + 1
    strides = np.array([int(np.prod(shape[i + 1:])) for i in range(d)], dtype=np.int64)
    grid = np.full(int(np.prod(shape)), -1, dtype=np.int64)
    grid[(W - lo) @ strides] = np.arange(len(W))
    grid[(outer - lo) @ strides] = -2 - np.arange(len(outer))
    centre = (W.min(axis=0) + W.max(axis=0)) // 2
    diam = int(np.ptp(W, axis=0).max())
    if rho is None:
        rho = 2.0 * max(diam, 1)
    bmask = inner_boundary(W)
    inner_idx = np.flatnonzero(bmask)

    if truncation == "exact":
        if len(inner_idx) > EXACT_TRUNCATION_LIMIT:
            raise PreconditionError(
                f"exact re-entry needs a dense {len(inner_idx)}^2 solve; use radius truncation"
            )
        gf = potential.gf.ensure_radius(diam + 2)
        bd = W[inner_idx]
        factor = potential.info.get("factor")
        if factor is None or factor[0].shape[0] != len(bd):
            factor = linalg.cho_factor(gf.matrix(bd), lower=True, check_finite=False)
        H = linalg.cho_solve(factor, gf.matrix(bd, outer), check_finite=False).T
        np.clip(H, 0.0, None, out=H)
        cum = np.cumsum(H, axis=1)
        ret = np.minimum(cum[:, -1], 1.0)
    elif truncation == "radius":
        if not rho > diam:
            raise PreconditionError(f"rho={rho} must exceed the window diameter {diam}")
        cum = np.zeros((0, 0))
        ret = np.zeros(0)
    else:
        raise PreconditionError(f"unknown truncation {truncation!r}")
    return Window(points=W, potential=potential, truncation=truncation, rho=float(rho),
                  outer=outer, inner_idx=inner_idx, grid=grid, grid_lo=lo,
                  grid_shape=shape.astype(np.int64), centre=centre.astype(np.int64),
                  return_prob=ret, cum_hit=cum)


# ---------------------------------------------------------------------------
# compiled kernels


@numba.njit(cache=True)
def _lookup(x, grid, lo, shape):
    flat = 0
    for j in range(x.size):
        r = x[j] - lo[j]
        if r < 0 or r >= shape[j]:
            return -1
        flat = flat * shape[j] + r
    return grid[flat]


@numba.njit(cache=True)
def _walk(start, seed, points, grid, lo, shape, centre, rho, exact, ret, cum, inner_idx,
          out_sites, out_jump, offset, write, max_steps):
    """Simulate one forward walk; return the number of recorded sites."""
    d = points.shape[1]
    np.random.seed(seed)
    x = points[start].copy()
    cur = start
    n = 0
    if write:
        out_sites[offset] = cur
        out_jump[offset] = False
    n += 1
    steps = 0
    while steps < max_steps:
        k = np.random.randint(0, 2 * d)
        x[k // 2] += 1 - 2 * (k % 2)
        steps += 1
        v = _lookup(x, grid, lo, shape)
        if v >= 0:
            if write:
                out_sites[offset + n] = v
                out_jump[offset + n] = False
            n += 1
            continue
        # stepped out of W onto the outer boundary
        if write:
            out_sites[offset + n] = v
            out_jump[offset + n] = False
        n += 1
        if exact:
            o = -2 - v
            r = np.random.random()
            if r >= ret[o]:
                return n
            row = cum[o]
            lo_i, hi_i = 0, row.size - 1
            while lo_i < hi_i:
                mid = (lo_i + hi_i) // 2
                if row[mid] > r:
                    hi_i = mid
                else:
                    lo_i = mid + 1
            w = inner_idx[lo_i]
            for j in range(d):
                x[j] = points[w, j]
            if write:
                out_sites[offset + n] = w
                out_jump[offset + n] = True
            n += 1
        else:
            while True:
                k = np.random.randint(0, 2 * d)
                x[k // 2] += 1 - 2 * (k % 2)
                steps += 1
                far = False
                for j in range(d):
                    if abs(x[j] - centre[j]) > rho:
                        far = True
                if far:
                    return n
                v = _lookup(x, grid, lo, shape)
                if v >= 0:
                    if write:
                        out_sites[offset + n] = v
                        out_jump[offset + n] = True
                    n += 1
                    break
                if steps >= max_steps:
                    return -n
    return -n


@numba.njit(cache=True, parallel=True)
def _lengths(starts, seeds, points, grid, lo, shape, centre, rho, exact, ret, cum, inner_idx,
             max_steps):
    n = starts.size
    out = np.empty(n, dtype=np.int64)
    dummy_s = np.empty(0, dtype=np.int64)
    dummy_j = np.empty(0, dtype=np.bool_)
    for i in numba.prange(n):
        out[i] = _walk(starts[i], seeds[i], points, grid, lo, shape, centre, rho, exact, ret,
                       cum, inner_idx, dummy_s, dummy_j, 0, False, max_steps)
    return out


@numba.njit(cache=True, parallel=True)
def _fill(starts, seeds, ptr, points, grid, lo, shape, centre, rho, exact, ret, cum, inner_idx,
          max_steps, sites, jump, holds):
    n = starts.size
    for i in numba.prange(n):
        _walk(starts[i], seeds[i], points, grid, lo, shape, centre, rho, exact, ret, cum,
              inner_idx, sites, jump, ptr[i], True, max_steps)
        np.random.seed((seeds[i] ^ 0x5DEECE66D) & 0xFFFFFFFF)
        for k in range(ptr[i], ptr[i + 1]):
            if sites[k] >= 0:
                holds[k] = np.random.exponential(1.0)
            else:
                holds[k] = 0.0


def _simulate(win: Window, starts: np.ndarray, seeds: np.ndarray, max_steps: int):
    exact = win.truncation == "exact"
    args = (win.points, win.grid, win.grid_lo, win.grid_shape, win.centre, int(win.rho), exact,
            win.return_prob, win.cum_hit, win.inner_idx.astype(np.int64))
    lengths = _lengths(starts, seeds, *args, max_steps)
    if np.any(lengths < 0):
        raise PreconditionError("a walk exceeded max_steps; increase the step budget")
    ptr = np.zeros(len(starts) + 1, dtype=np.int64)
    np.cumsum(lengths, out=ptr[1:])
    sites = np.empty(ptr[-1], dtype=np.int64)
    jump = np.empty(ptr[-1], dtype=np.bool_)
    holds = np.empty(ptr[-1])
    _fill(starts, seeds, ptr, *args, max_steps, sites, jump, holds)
    return ptr, sites, jump, holds


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class Trajectory:
    """A forward trajectory: sites visited, holding times (NaN off W) and jump flags.

    ``jump[k]`` marks a re-entry into W that is not a neighbour step of the
    recorded path (the excursion outside was not stored).
    """

    label: float
    sites: np.ndarray
    holds: np.ndarray
    inside: np.ndarray
    jump: np.ndarray
    entry_index: int = 0


@dataclass
class InterlacementEnsemble:
    """Flat storage of the trajectories of one or more ensembles.

    ``traj_ptr`` delimits the trajectories in ``sites/holds/jump``;
    ``ens_ptr`` delimits the ensembles in the trajectory list.
    """

    window: Window
    u_max: float
    labels: np.ndarray
    starts: np.ndarray
    traj_ptr: np.ndarray
    sites: np.ndarray
    holds: np.ndarray
    jump: np.ndarray
    ens_ptr: np.ndarray
    seed: int
    stream: int = 0

    @property
    def n_trajectories(self) -> int:
        return len(self.labels)

    @property
    def n_ensembles(self) -> int:
        return len(self.ens_ptr) - 1

    def counts(self) -> np.ndarray:
        return np.diff(self.ens_ptr)

    def trajectory(self, i: int) -> Trajectory:
        a, b = self.traj_ptr[i], self.traj_ptr[i + 1]
        s = self.sites[a:b]
        inside = s >= 0
        coords = np.where(inside[:, None], self.window.points[np.maximum(s, 0)],
                          self.window.outer[np.maximum(-2 - s, 0)])
        holds = np.where(inside, self.holds[a:b], np.nan)
        return Trajectory(label=float(self.labels[i]), sites=coords, holds=holds, inside=inside,
                          jump=self.jump[a:b].copy())

    def ensemble(self, k: int) -> "InterlacementEnsemble":
        """View of the k-th ensemble of a batch."""
        t0, t1 = self.ens_ptr[k], self.ens_ptr[k + 1]
        a, b = self.traj_ptr[t0], self.traj_ptr[t1]
        return InterlacementEnsemble(
            window=self.window, u_max=self.u_max, labels=self.labels[t0:t1],
            starts=self.starts[t0:t1], traj_ptr=self.traj_ptr[t0:t1 + 1] - a,
            sites=self.sites[a:b], holds=self.holds[a:b], jump=self.jump[a:b],
            ens_ptr=np.array([0, t1 - t0]), seed=self.seed, stream=self.stream)

    def manifest(self) -> dict:
        return {"seed": int(self.seed), "stream": int(self.stream), "u_max": self.u_max,
                "cap_W": self.window.cap, "rho": self.window.rho,
                "truncation": self.window.truncation, "backend": self.window.potential.backend,
                "n_trajectories": int(self.n_trajectories), "n_ensembles": int(self.n_ensembles)}


def sample_ensembles(win: Window, u_max: float, n_ensembles: int, seed: int, stream: int = 0,
                     max_steps: int = 10**8) -> InterlacementEnsemble:
    """Sample ``n_ensembles`` independent ensembles in one batch."""
    if u_max < 0:
        raise PreconditionError("u_max must be nonnegative")
    rng = generator(seed, 2 * stream + 100)
    counts = rng.poisson(u_max * win.cap, size=n_ensembles) if u_max > 0 else np.zeros(
        n_ensembles, dtype=np.int64)
    total = int(counts.sum())
    p = win.potential.e / win.cap
    starts = rng.choice(len(win.points), size=total, p=p).astype(np.int64)
    # uniform on (0, u_max]
    labels = u_max * (1.0 - rng.random(total))
    seeds = spawn_seeds(seed, total, stream=2 * stream + 101)
    ptr, sites, jump, holds = _simulate(win, starts, seeds, max_steps)
    ens_ptr = np.zeros(n_ensembles + 1, dtype=np.int64)
    np.cumsum(counts, out=ens_ptr[1:])
    return InterlacementEnsemble(window=win, u_max=float(u_max), labels=labels, starts=starts,
                                 traj_ptr=ptr, sites=sites, holds=holds, jump=jump,
                                 ens_ptr=ens_ptr, seed=int(seed), stream=int(stream))


def sample_ensemble(W, u_max: float, potential: PotentialTable | None = None,
                    rho: float | None = None, seed: int = 0, truncation: str = "exact",
                    stream: int = 0, window: Window | None = None) -> InterlacementEnsemble:
    """Sample one interlacement ensemble restricted to ``W`` at level ``u_max``."""
    win = window if window is not None else prepare_window(W, potential, truncation, rho)
    return sample_ensembles(win, u_max, 1, seed, stream)


# ---------------------------------------------------------------------------
# observables


def _check_level(ens: InterlacementEnsemble, u: float):
    if not 0 <= u <= ens.u_max:
        raise PreconditionError(f"level {u} outside [0, {ens.u_max}]")


def _site_labels(ens: InterlacementEnsemble) -> np.ndarray:
    return np.repeat(ens.labels, np.diff(ens.traj_ptr))


def occupation_field(ens: InterlacementEnsemble, u: float) -> np.ndarray:
    """``L_{x,u}`` for every window point (aligned with ``ens.window.points``)."""
    _check_level(ens, u)
    keep = (ens.sites >= 0) & (_site_labels(ens) <= u)
    return np.bincount(ens.sites[keep], weights=ens.holds[keep], minlength=len(ens.window.points))


def occupation_at(ens: InterlacementEnsemble, u: float, site_index: int) -> np.ndarray:
    """``L_{x,u}`` at one window site for every ensemble of a batch."""
    _check_level(ens, u)
    lab = _site_labels(ens)
    traj_of_site = np.repeat(np.arange(ens.n_trajectories), np.diff(ens.traj_ptr))
    ens_of_traj = np.repeat(np.arange(ens.n_ensembles), ens.counts())
    keep = (ens.sites == site_index) & (lab <= u)
    return np.bincount(ens_of_traj[traj_of_site[keep]], weights=ens.holds[keep],
                       minlength=ens.n_ensembles)


def occupation_pairing(ens: InterlacementEnsemble, u: float, V_idx, V_vals) -> np.ndarray:
    """``<L_u, V>`` per ensemble for V given on window indices."""
    _check_level(ens, u)
    weight = np.zeros(len(ens.window.points))
    weight[np.asarray(V_idx)] = V_vals
    lab = _site_labels(ens)
    keep = (ens.sites >= 0) & (lab <= u)
    contrib = np.zeros(len(ens.sites))
    contrib[keep] = ens.holds[keep] * weight[ens.sites[keep]]
    traj_sum = np.add.reduceat(contrib, ens.traj_ptr[:-1]) if len(contrib) else np.zeros(0)
    traj_sum[np.diff(ens.traj_ptr) == 0] = 0.0
    ens_of_traj = np.repeat(np.arange(ens.n_ensembles), ens.counts())
    return np.bincount(ens_of_traj, weights=traj_sum, minlength=ens.n_ensembles)


def interlacement_mask(ens: InterlacementEnsemble, u: float) -> np.ndarray:
    """Boolean mask over window points of ``I^u``."""
    _check_level(ens, u)
    keep = (ens.sites >= 0) & (_site_labels(ens) <= u)
    mask = np.zeros(len(ens.window.points), dtype=bool)
    mask[ens.sites[keep]] = True
    return mask


def interlacement_set(ens: InterlacementEnsemble, u: float) -> np.ndarray:
    return ens.window.points[interlacement_mask(ens, u)]


def vacant_set(ens: InterlacementEnsemble, u: float, region=None) -> np.ndarray:
    """``V^u ∩ region`` (region defaults to the window)."""
    mask = ~interlacement_mask(ens, u)
    if region is None:
        return ens.window.points[mask]
    region = as_points(region, ens.window.d)
    idx = ens.window.index().lookup(region)
    if np.any(idx < 0):
        raise PreconditionError("region escapes the window")
    return region[mask[idx]]


def first_hit_levels(ens: InterlacementEnsemble) -> np.ndarray:
    """Smallest label covering each window point (inf if never visited).

    ``x in I^u`` iff ``first_hit_levels[x] <= u``, which gives every level of a
    coupled family at once.
    """
    lab = _site_labels(ens)
    keep = ens.sites >= 0
    out = np.full(len(ens.window.points), np.inf)
    np.minimum.at(out, ens.sites[keep], lab[keep])
    return out


# ---------------------------------------------------------------------------
# persistence


def save_jsonl(ens: InterlacementEnsemble, path) -> None:
    """One header line, then one record per trajectory with delta-encoded sites."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"manifest": ens.manifest(), "d": ens.window.d}) + "\n")
        for i in range(ens.n_trajectories):
            t = ens.trajectory(i)
            deltas = np.diff(t.sites, axis=0).tolist()
            rec = {"label": t.label, "start": t.sites[0].tolist(), "deltas": deltas,
                   "holds": [h for h in t.holds[t.inside].tolist()],
                   "jumps": np.flatnonzero(t.jump).tolist()}
            fh.write(json.dumps(rec) + "\n")


def load_jsonl(path) -> tuple[dict, list[Trajectory]]:
    trajs = []
    with open(path) as fh:
        header = json.loads(fh.readline())
        for line in fh:
            rec = json.loads(line)
            start = np.array(rec["start"], dtype=np.int64)
            deltas = np.array(rec["deltas"], dtype=np.int64).reshape(-1, len(start))
            sites = np.vstack([start, start + np.cumsum(deltas, axis=0)])
            jump = np.zeros(len(sites), dtype=bool)
            jump[rec["jumps"]] = True
            trajs.append(Trajectory(label=rec["label"], sites=sites,
                                    holds=np.array(rec["holds"]), inside=np.ones(0, bool),
                                    jump=jump))
    return header, trajs


# ---------------------------------------------------------------------------
# paranoid check of the backward halves


def check_backward_halves(ens: InterlacementEnsemble, n_traj: int = 20, n_steps: int = 100,
                          seed: int = 0) -> dict:
    """Sample backward halves by the Doob transform with ``h = 1 - h_W`` and
    confirm that none of them re-enters W.

    From ``x`` the walk moves to a neighbour ``y`` with probability
    proportional to ``1 - h_W(y)``, which is zero on W.
    """
    win = ens.window
    idx = win.index()
    rng = generator(seed, 77)
    steps = np.vstack([np.eye(win.d, dtype=np.int64), -np.eye(win.d, dtype=np.int64)])
    reentries = 0
    n_traj = min(n_traj, ens.n_trajectories)
    min_weight = np.inf
    for i in range(n_traj):
        x = win.points[ens.starts[i]].copy()
        for _ in range(n_steps):
            nbrs = x + steps
            w = 1.0 - win.potential.h(nbrs)
            w[np.abs(w) < 1e-9] = 0.0
            inW = idx.contains(nbrs)
            if np.any(w[inW] > 0):
                reentries += 1
            w = np.clip(w, 0.0, None)
            min_weight = min(min_weight, float(w[w > 0].min()))
            x = nbrs[rng.choice(len(nbrs), p=w / w.sum())]
            if idx.contains(x[None])[0]:
                reentries += 1
                break
    return {"trajectories": n_traj, "steps": n_steps, "reentries": reentries,
            "min_positive_weight": min_weight}
