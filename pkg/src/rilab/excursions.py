"""Scales, box families and excursion counts between ``D_z`` and ``∂U_z``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import PreconditionError
from .lattice import DiscreteBox, PointIndex, as_points, inner_boundary
from .potential import PotentialTable
from .sampler import InterlacementEnsemble, _check_level


def _int_root_floor(x: float, k: int) -> int:
    """Largest integer L with ``L^k <= x``."""
    if x < 1:
        return 0
    L = int(math.floor(x ** (1.0 / k)))
    while (L + 1) ** k <= x:
        L += 1
    while L > 0 and L**k > x:
        L -= 1
    return L


@dataclass(frozen=True)
class ScalePair:
    """The box scales ``L0 = floor((gamma N log N)^{1/(d-1)})`` and
    ``Lhat0 = 100 d floor(sqrt(gamma) N)``, with separation parameter K."""

    N: int
    gamma: float
    L0: int
    Lhat0: int
    K: int
    d: int = 3
    toy: bool = False

    @property
    def K_bar(self) -> int:
        return 2 * self.K + 3

    def B(self, z) -> DiscreteBox:
        """``B_z = z + [0, L0)^d``."""
        return DiscreteBox(np.asarray(z, dtype=np.int64), self.L0)

    def D(self, z) -> DiscreteBox:
        """``D_z = z + [-3 L0, 4 L0)^d``."""
        return DiscreteBox(np.asarray(z, dtype=np.int64) - 3 * self.L0, 7 * self.L0)

    def U(self, z) -> DiscreteBox:
        """``U_z = z + [-K L0 + 1, K L0 - 1)^d``."""
        return DiscreteBox(np.asarray(z, dtype=np.int64) - self.K * self.L0 + 1,
                           2 * self.K * self.L0 - 2)

    def nested(self, z=None) -> bool:
        z = np.zeros(self.d, dtype=np.int64) if z is None else np.asarray(z)
        B, D, U = self.B(z), self.D(z), self.U(z)
        return bool(np.all(D.lower <= B.lower) and np.all(B.upper <= D.upper)
                    and np.all(U.lower <= D.lower) and np.all(D.upper <= U.upper))


def scales(N: int, gamma: float, K: int = 100, d: int = 3) -> ScalePair:
    """Exact floor arithmetic for ``L0`` and ``Lhat0``.

    ``Lhat0`` uses ``floor(sqrt(x)) = isqrt(floor(x))`` on the exact rational
    ``gamma N^2``; ``L0`` corrects the floating root by integer powers.
    """
    if not 0 < gamma <= 1:
        raise PreconditionError("gamma_N must lie in (0, 1]")
    if K < 100:
        raise PreconditionError("K must be at least 100 (use toy_scales for desk runs)")
    if N < 2:
        raise PreconditionError("N must be at least 2")
    L0 = _int_root_floor(gamma * N * math.log(N), d - 1)
    if L0 == 0:
        raise PreconditionError("degenerate scale: L0 = 0")
    g = Fraction(str(gamma)) if isinstance(gamma, float) else Fraction(gamma)
    Lhat0 = 100 * d * math.isqrt(math.floor(g * N * N))
    return ScalePair(N=N, gamma=float(gamma), L0=L0, Lhat0=Lhat0, K=K, d=d)


def toy_scales(L0: int, K: int, d: int = 3) -> ScalePair:
    """User-chosen desk-scale ``L0`` and ``K`` (no relation to N)."""
    if L0 < 1:
        raise PreconditionError("L0 must be positive")
    s = ScalePair(N=0, gamma=float("nan"), L0=int(L0), Lhat0=0, K=int(K), d=d, toy=True)
    if not s.nested():
        raise PreconditionError(f"K={K} too small: need B_z ⊆ D_z ⊆ U_z")
    return s


@dataclass
class ExcursionRecord:
    z: np.ndarray
    u: float
    count: int
    entries: list = field(default_factory=list)
    exits: list = field(default_factory=list)
    local_time: float = 0.0
    occupation_D: float = 0.0


def _traj_coords(ens: InterlacementEnsemble, a: int, b: int) -> np.ndarray:
    s = ens.sites[a:b]
    win = ens.window
    return np.where((s >= 0)[:, None], win.points[np.maximum(s, 0)],
                    win.outer[np.maximum(-2 - s, 0)])


def excursion_segments(in_D: np.ndarray, out_U: np.ndarray) -> list[tuple[int, int]]:
    """``(entry, exit)`` index pairs: entry into D, then the first later site off U.

    An excursion still open at the end of the path is closed at ``len - 1``.
    """
    d_idx = np.flatnonzero(in_D)
    u_idx = np.flatnonzero(out_U)
    segs = []
    t = 0
    n = len(in_D)
    while True:
        k = np.searchsorted(d_idx, t)
        if k == len(d_idx):
            return segs
        entry = int(d_idx[k])
        m = np.searchsorted(u_idx, entry)
        exit_ = int(u_idx[m]) if m < len(u_idx) else n - 1
        segs.append((entry, exit_))
        if m == len(u_idx):
            return segs
        t = exit_ + 1


def count_excursions(ens: InterlacementEnsemble, u: float, z, scale: ScalePair) -> ExcursionRecord:
    """Excursions from ``D_z`` to the exterior boundary of ``U_z`` at level ``u``.

    The window must contain ``U_z``; then every exit from ``U_z`` is recorded
    (either inside the window or as the step onto its outer boundary).
    """
    _check_level(ens, u)
    z = np.asarray(z, dtype=np.int64)
    D, U = scale.D(z), scale.U(z)
    win = ens.window
    if not np.all(PointIndex(win.points).contains(U.points())):
        raise PreconditionError("window must contain U_z")
    d_pts = D.points()
    d_inner = PointIndex(d_pts[inner_boundary(d_pts)])
    rec = ExcursionRecord(z=z, u=u, count=0)
    for i in np.flatnonzero(ens.labels <= u):
        a, b = ens.traj_ptr[i], ens.traj_ptr[i + 1]
        x = _traj_coords(ens, a, b)
        in_D = D.contains(x)
        out_U = ~U.contains(x)
        holds = ens.holds[a:b]
        on_bd = d_inner.contains(x) & (ens.sites[a:b] >= 0)
        for e, f in excursion_segments(in_D, out_U):
            rec.count += 1
            rec.entries.append((int(i), e))
            rec.exits.append((int(i), f))
            rec.local_time += float(holds[e:f + 1][on_bd[e:f + 1]].sum())
        rec.occupation_D += float(holds[in_D & (ens.sites[a:b] >= 0)].sum())
    return rec


def occupancy_check(field, points, gamma: float, potential: PotentialTable,
                    eps_hat: float = 0.0) -> dict:
    """Test ``<L_u, e_C> >= gamma cap(C) / (1 + eps_hat)``.

    ``field`` holds ``L_{x,u}`` at ``points``; sites of C missing from
    ``points`` count as zero occupation.
    """
    points = as_points(points)
    field = np.asarray(field, dtype=float)
    idx = PointIndex(points).lookup(potential.K)
    L = np.where(idx >= 0, field[np.maximum(idx, 0)], 0.0)
    pairing = float(L @ potential.e)
    threshold = gamma * potential.cap / (1.0 + eps_hat)
    return {"pairing": pairing, "threshold": threshold, "margin": pairing - threshold,
            "passed": bool(pairing >= threshold)}


def smallest_eps_hat(anchors, side: int, d: int = 3, **kwargs) -> dict:
    """Smallest ``eps_hat`` with ``sum_D e_C(D) ebar_D <= (1 + eps_hat) e_C`` for
    ``C`` the union of the boxes ``anchor + [0, side)^d``."""
    from .appendix import perturbation_ratios

    r = perturbation_ratios(anchors, side, d, **kwargs)
    return {"eps_hat": max(float(r["max_ratio"]) - 1.0, 0.0), **r}
