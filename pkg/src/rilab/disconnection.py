"""Disconnection of A_N from S_N by the interlacement set.

Disconnection occurs when no nearest-neighbour path of vacant sites inside
``B(0, floor(MN))`` joins a vacant site of ``A_N`` to a vacant site of
``S_N``. If every site of ``A_N`` is covered, no such path can start, so the
event occurs.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConditioningTooRare, PreconditionError
from .lattice import BlowUpPair, CompactSetSpec, PointIndex, as_points, blow_up
from .sampler import (InterlacementEnsemble, Window, first_hit_levels, occupation_field,
                      prepare_window, sample_ensembles)


@dataclass
class DisconnectionResult:
    occurred: bool
    u: float | None
    N: int
    M: float
    cluster_size: int
    witness: np.ndarray | None = field(default=None, repr=False)
    witness_kind: str = ""


# ---------------------------------------------------------------------------
# union-find on a box grid


@numba.njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@numba.njit(cache=True)
def _label_grid(open_mask, shape):
    """Union-find labels of the 2d-connected components of ``open_mask``.

    Closed sites get label -1.
    """
    n = open_mask.size
    d = shape.size
    parent = np.arange(n)
    rank = np.zeros(n, dtype=np.int8)
    strides = np.ones(d, dtype=np.int64)
    for j in range(d - 2, -1, -1):
        strides[j] = strides[j + 1] * shape[j + 1]
    for i in range(n):
        if not open_mask[i]:
            continue
        rem = i
        for j in range(d):
            c = rem // strides[j]
            rem -= c * strides[j]
            if c + 1 < shape[j]:
                k = i + strides[j]
                if open_mask[k]:
                    a = _find(parent, i)
                    b = _find(parent, k)
                    if a != b:
                        if rank[a] < rank[b]:
                            parent[a] = b
                        elif rank[a] > rank[b]:
                            parent[b] = a
                        else:
                            parent[b] = a
                            rank[a] += 1
    labels = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if open_mask[i]:
            labels[i] = _find(parent, i)
    return labels


def label_components(open_mask: np.ndarray) -> np.ndarray:
    """Component labels (root indices, -1 on closed sites) of a boolean grid."""
    return _label_grid(np.ascontiguousarray(open_mask).ravel(),
                       np.array(open_mask.shape, dtype=np.int64)).reshape(open_mask.shape)


def _box_grid(pair: BlowUpPair):
    r = pair.radius
    shape = (2 * r + 1,) * pair.d
    strides = np.array([(2 * r + 1) ** (pair.d - 1 - i) for i in range(pair.d)], dtype=np.int64)
    a_flat = (pair.A_N + r) @ strides
    s_flat = (pair.S_N + r) @ strides
    return shape, strides, a_flat, s_flat


def _vacant_path(open_flat, shape, strides, sources, targets) -> np.ndarray:
    """BFS path through open sites from any source to any target (flat indices)."""
    d = len(shape)
    target = np.zeros(open_flat.size, dtype=bool)
    target[targets] = True
    prev = np.full(open_flat.size, -2, dtype=np.int64)
    q = deque()
    for s in sources:
        if open_flat[s] and prev[s] == -2:
            prev[s] = -1
            q.append(s)
    coords = np.array(np.unravel_index(np.arange(open_flat.size), shape)).T
    while q:
        i = q.popleft()
        if target[i]:
            path = [i]
            while prev[path[-1]] >= 0:
                path.append(prev[path[-1]])
            return np.array(path[::-1])
        c = coords[i]
        for j in range(d):
            for sgn in (-1, 1):
                cj = c[j] + sgn
                if 0 <= cj < shape[j]:
                    k = i + sgn * strides[j]
                    if open_flat[k] and prev[k] == -2:
                        prev[k] = i
                        q.append(k)
    return np.zeros(0, dtype=np.int64)


def check_disconnection_mask(open_grid: np.ndarray, pair: BlowUpPair, u: float | None = None,
                             witness: bool = False) -> DisconnectionResult:
    """Disconnection test on a vacancy grid over ``B(0, floor(MN))`` (C order)."""
    shape, strides, a_flat, s_flat = _box_grid(pair)
    if open_grid.shape != shape:
        raise PreconditionError(f"vacancy grid must have shape {shape}")
    flat = open_grid.ravel()
    labels = label_components(open_grid).ravel()
    a_labels = np.unique(labels[a_flat][labels[a_flat] >= 0])
    s_labels = np.unique(labels[s_flat][labels[s_flat] >= 0])
    occurred = np.intersect1d(a_labels, s_labels).size == 0
    cluster = int(np.isin(labels, a_labels).sum()) if a_labels.size else 0
    res = DisconnectionResult(occurred=bool(occurred), u=u, N=pair.N, M=pair.M,
                              cluster_size=cluster)
    if witness:
        r = pair.radius
        if occurred:
            # occupied sites bordering the vacant clusters of A_N, plus covered A_N sites
            cl = np.isin(labels, a_labels) if a_labels.size else np.zeros(flat.size, bool)
            grid_cl = cl.reshape(shape)
            border = np.zeros(shape, dtype=bool)
            for ax in range(len(shape)):
                for sgn in (1, -1):
                    border |= np.roll(grid_cl, sgn, axis=ax) & ~_edge(shape, ax, sgn)
            border &= ~open_grid
            border_flat = border.ravel()
            border_flat[a_flat[~flat[a_flat]]] = True
            res.witness = np.array(np.unravel_index(np.flatnonzero(border_flat), shape)).T - r
            res.witness_kind = "blocking-set"
        else:
            path = _vacant_path(flat, shape, strides, a_flat, s_flat)
            res.witness = np.array(np.unravel_index(path, shape)).T - r
            res.witness_kind = "vacant-path"
    return res


def _edge(shape, ax, sgn):
    """Mask of sites that np.roll would fill from the opposite face."""
    m = np.zeros(shape, dtype=bool)
    sl = [slice(None)] * len(shape)
    sl[ax] = 0 if sgn == 1 else -1
    m[tuple(sl)] = True
    return m


def check_disconnection(vacant, pair: BlowUpPair, u: float | None = None,
                        witness: bool = True) -> DisconnectionResult:
    """Disconnection test for a vacant point set inside ``B(0, floor(MN))``."""
    vacant = as_points(vacant, pair.d)
    r = pair.radius
    if len(vacant) and np.abs(vacant).max() > r:
        raise PreconditionError("vacant set leaves B(0, floor(MN))")
    shape, strides, _, _ = _box_grid(pair)
    grid = np.zeros(shape, dtype=bool)
    if len(vacant):
        grid.ravel()[(vacant + r) @ strides] = True
    return check_disconnection_mask(grid, pair, u, witness)


# ---------------------------------------------------------------------------
# Monte Carlo over replicas


@dataclass
class Experiment:
    """Window, blow-up and index maps shared by all replicas of an experiment."""

    pair: BlowUpPair
    window: Window
    grid_order: np.ndarray
    a_idx: np.ndarray

    @classmethod
    def build(cls, A: CompactSetSpec, N: int, M: float, truncation: str = "exact",
              rho: float | None = None) -> "Experiment":
        pair = blow_up(A, M, N)
        box = pair.window()
        win = prepare_window(box.points(), truncation=truncation, rho=rho)
        # window points are sorted lexicographically, which is C order on the box
        order = win.index().lookup(box.points())
        a_idx = win.index().lookup(pair.A_N)
        return cls(pair=pair, window=win, grid_order=order, a_idx=a_idx)

    def vacancy_grid(self, first_hit: np.ndarray, u: float) -> np.ndarray:
        shape = (2 * self.pair.radius + 1,) * self.pair.d
        return (first_hit[self.grid_order] > u).reshape(shape)


def replicas(exp: Experiment, u_max: float, n: int, seed: int, batch: int = 100):
    """Yield ``(replica index, ensemble)`` for ``n`` independent replicas."""
    done = 0
    b = 0
    while done < n:
        m = min(batch, n - done)
        ens = sample_ensembles(exp.window, u_max, m, seed, stream=b)
        for k in range(m):
            yield done + k, ens.ensemble(k)
        done += m
        b += 1


def estimate_disconnection_probability(A: CompactSetSpec, N: int, M: float, levels, n_replicas: int,
                                       seed: int = 0, experiment: Experiment | None = None) -> dict:
    """Fraction of replicas with disconnection at each level, from coupled ensembles.

    One ensemble at the largest level is drawn per replica, and ``I^u`` for
    smaller levels is obtained by label filtering, so occurrence is
    monotone in u replica by replica.
    """
    if n_replicas < 1:
        raise PreconditionError("need at least one replica")
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    exp = experiment or Experiment.build(A, N, M)
    occ = np.zeros((n_replicas, len(levels)), dtype=bool)
    u_max = float(levels.max())
    for i, ens in replicas(exp, u_max, n_replicas, seed):
        fh = first_hit_levels(ens)
        for j, u in enumerate(levels):
            occ[i, j] = check_disconnection_mask(exp.vacancy_grid(fh, u), exp.pair, u).occurred
    p = occ.mean(axis=0)
    se = np.sqrt(p * (1 - p) / n_replicas)
    return {"levels": levels, "p": p, "se": se, "occurred": occ, "n": n_replicas}


def conditional_occupation_profile(A: CompactSetSpec, N: int, M: float, u: float,
                                   max_replicas: int, seed: int = 0, min_hits: int = 100,
                                   condition=None, experiment: Experiment | None = None,
                                   on_replica=None) -> dict:
    """Per-site means of ``L_{x,u}`` conditionally on disconnection and unconditionally.

    Replicas are drawn until ``min_hits`` of them satisfy the condition or
    ``max_replicas`` have been drawn. ``condition(result, field)`` replaces the
    disconnection event when given. ``on_replica(i, field, occurred)`` is
    called for every replica.

    Raises
    ------
    ConditioningTooRare
        If fewer than ``min_hits`` replicas satisfy the condition.
    """
    if u <= 0:
        raise ConditioningTooRare("at u = 0 the vacant set is everything; disconnection cannot occur")
    exp = experiment or Experiment.build(A, N, M)
    n_sites = len(exp.window.points)
    s_all = np.zeros(n_sites)
    q_all = np.zeros(n_sites)
    s_hit = np.zeros(n_sites)
    q_hit = np.zeros(n_sites)
    stat_all, stat_hit, records = [], [], []
    hits = drawn = 0
    for i, ens in replicas(exp, u, max_replicas, seed):
        L = occupation_field(ens, u)
        fh = first_hit_levels(ens)
        res = check_disconnection_mask(exp.vacancy_grid(fh, u), exp.pair, u)
        ok = res.occurred if condition is None else bool(condition(res, L))
        drawn += 1
        s_all += L
        q_all += L * L
        a_mean = float(L[exp.a_idx].mean())
        stat_all.append(a_mean)
        records.append((i, bool(ok), float(L[exp.a_idx].sum())))
        if ok:
            hits += 1
            s_hit += L
            q_hit += L * L
            stat_hit.append(a_mean)
        if on_replica is not None:
            on_replica(i, L, ok)
        if hits >= min_hits and on_replica is None:
            break
    if hits < min_hits:
        raise ConditioningTooRare(f"only {hits} of {drawn} replicas satisfied the condition "
                                  f"(needed {min_hits})")
    mean_all = s_all / drawn
    mean_hit = s_hit / hits
    se_all = np.sqrt(np.maximum(q_all / drawn - mean_all**2, 0) / drawn)
    se_hit = np.sqrt(np.maximum(q_hit / hits - mean_hit**2, 0) / hits)
    stat_hit = np.array(stat_hit)
    stat_all = np.array(stat_all)
    return {
        "points": exp.window.points, "cond_mean": mean_hit, "cond_se": se_hit,
        "uncond_mean": mean_all, "uncond_se": se_all, "hits": hits, "replicas": drawn,
        "summary": float(stat_hit.mean() - u),
        "summary_se": float(stat_hit.std(ddof=1) / np.sqrt(hits)) if hits > 1 else np.inf,
        "uncond_summary": float(stat_all.mean() - u),
        "uncond_summary_se": float(stat_all.std(ddof=1) / np.sqrt(drawn)) if drawn > 1 else np.inf,
        "records": records,
    }
