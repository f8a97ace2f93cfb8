"""Lattice points, discrete boxes, compact sets and their discrete blow-ups.

Point sets are ``(n, d)`` integer arrays throughout; single points are length
``d`` integer arrays or tuples. All geometry on Z^d uses the sup-norm.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError

MIN_DIM = 3


def as_points(points, d: int | None = None) -> np.ndarray:
    """Coerce to an ``(n, d)`` int64 array."""
    arr = np.asarray(points, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, d or MIN_DIM)
    if d is not None and arr.shape[1] != d:
        raise PreconditionError(f"expected points of dimension {d}, got {arr.shape[1]}")
    return arr


def check_dim(d: int) -> int:
    if int(d) != d or d < MIN_DIM:
        raise PreconditionError(f"dimension must be an integer >= {MIN_DIM}, got {d}")
    return int(d)


def sup_norm(x) -> np.ndarray:
    return np.abs(np.asarray(x)).max(axis=-1)


def unit_vectors(d: int) -> np.ndarray:
    """The 2d nearest-neighbour steps, ordered +e_1, -e_1, +e_2, ..."""
    steps = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        steps[2 * i, i] = 1
        steps[2 * i + 1, i] = -1
    return steps


def neighbors(x) -> np.ndarray:
    """Return the ``2d`` nearest neighbours of a lattice point as a ``(2d, d)`` array."""
    x = np.asarray(x, dtype=np.int64)
    check_dim(x.size)
    return x[None, :] + unit_vectors(x.size)


def grid_points(lower, upper) -> np.ndarray:
    """All integer points ``z`` with ``lower <= z <= upper`` (inclusive), C order."""
    lower = np.asarray(lower, dtype=np.int64)
    upper = np.asarray(upper, dtype=np.int64)
    if np.any(upper < lower):
        return np.zeros((0, lower.size), dtype=np.int64)
    axes = [np.arange(lo, hi + 1) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def unique_points(points) -> np.ndarray:
    points = as_points(points)
    if len(points) == 0:
        return points
    return np.unique(points, axis=0)


class PointIndex:
    """Map lattice points to their row index in a fixed point array.

    Uses a dense lookup grid over the bounding box (padded by ``pad``), which is
    what the samplers need for neighbour moves in flattened coordinates.
    """

    def __init__(self, points, pad: int = 0):
        self.points = as_points(points)
        n, d = self.points.shape
        if n == 0:
            raise PreconditionError("cannot index an empty point set")
        self.d = d
        self.pad = int(pad)
        self.origin = self.points.min(axis=0) - self.pad
        self.shape = tuple(int(s) for s in self.points.max(axis=0) + self.pad - self.origin + 1)
        self.strides = np.array(
            [int(np.prod(self.shape[i + 1:])) for i in range(d)], dtype=np.int64
        )
        self.grid = np.full(int(np.prod(self.shape)), -1, dtype=np.int64)
        flat = self.flat(self.points)
        if len(np.unique(flat)) != n:
            raise PreconditionError("point set contains duplicates")
        self.grid[flat] = np.arange(n)

    def flat(self, points) -> np.ndarray:
        return (as_points(points, self.d) - self.origin) @ self.strides

    def inside_grid(self, points) -> np.ndarray:
        rel = as_points(points, self.d) - self.origin
        return np.all((rel >= 0) & (rel < np.array(self.shape)), axis=1)

    def lookup(self, points) -> np.ndarray:
        """Row index of each query point, ``-1`` when absent."""
        points = as_points(points, self.d)
        out = np.full(len(points), -1, dtype=np.int64)
        ok = self.inside_grid(points)
        out[ok] = self.grid[self.flat(points[ok])]
        return out

    def contains(self, points) -> np.ndarray:
        return self.lookup(points) >= 0


def inner_boundary(points) -> np.ndarray:
    """Boolean mask of points having at least one neighbour outside the set."""
    points = as_points(points)
    idx = PointIndex(points, pad=1)
    mask = np.zeros(len(points), dtype=bool)
    for step in unit_vectors(points.shape[1]):
        mask |= idx.lookup(points + step) < 0
    return mask


def outer_boundary(points) -> np.ndarray:
    """Points outside the set adjacent to it (sorted, unique)."""
    points = as_points(points)
    idx = PointIndex(points, pad=1)
    cand = np.concatenate([points + s for s in unit_vectors(points.shape[1])])
    cand = cand[idx.lookup(cand) < 0]
    return unique_points(cand)


@dataclass(frozen=True)
class DiscreteBox:
    """Half-open lattice box ``anchor + [0, side)^d``; ``side`` may vary per axis."""

    anchor: tuple
    side: tuple

    def __post_init__(self):
        anchor = tuple(int(a) for a in np.atleast_1d(self.anchor))
        side = np.atleast_1d(self.side).astype(np.int64)
        if side.size == 1:
            side = np.repeat(side, len(anchor))
        if len(side) != len(anchor) or np.any(side <= 0):
            raise PreconditionError("box sides must be positive, one per axis")
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "side", tuple(int(s) for s in side))

    @classmethod
    def from_interval(cls, anchor, lo: float, hi: float, d: int | None = None) -> "DiscreteBox":
        """``anchor + [lo, hi)^d ∩ Z^d`` for real ``lo < hi``."""
        anchor = np.atleast_1d(np.asarray(anchor, dtype=np.int64))
        if d is not None and anchor.size == 1:
            anchor = np.repeat(anchor, d)
        first = math.ceil(lo)
        last = math.ceil(hi) - 1
        if last < first:
            raise PreconditionError(f"empty interval [{lo}, {hi})")
        return cls(tuple(anchor + first), (last - first + 1,) * anchor.size)

    @classmethod
    def ball(cls, center, r: int) -> "DiscreteBox":
        """Closed sup-norm ball ``B(center, r)``."""
        center = np.asarray(center, dtype=np.int64)
        return cls(tuple(center - int(r)), (2 * int(r) + 1,) * center.size)

    @property
    def d(self) -> int:
        return len(self.anchor)

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.anchor, dtype=np.int64)

    @property
    def upper(self) -> np.ndarray:
        """Largest contained point (inclusive)."""
        return self.lower + np.array(self.side) - 1

    def __len__(self) -> int:
        return int(np.prod(self.side))

    def points(self) -> np.ndarray:
        return grid_points(self.lower, self.upper)

    def contains(self, points) -> np.ndarray:
        points = as_points(points, self.d)
        return np.all((points >= self.lower) & (points <= self.upper), axis=1)

    def boundary_points(self) -> np.ndarray:
        pts = self.points()
        on = np.any((pts == self.lower) | (pts == self.upper), axis=1)
        return pts[on]


def sup_sphere(r: int, d: int, center=None) -> np.ndarray:
    """``{x : |x - center|_inf = r}``."""
    check_dim(d)
    center = np.zeros(d, dtype=np.int64) if center is None else np.asarray(center)
    box = DiscreteBox.ball(center, r)
    if r == 0:
        return box.points()
    return box.boundary_points()


# ---------------------------------------------------------------------------
# compact subsets of R^d

_EPS = 1e-12


class CompactSetSpec:
    """Base class for the compact sets used as ``A`` (boxes, balls, box unions)."""

    kind = "abstract"
    d: int

    def contains(self, points) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:  # pragma: no cover - interface
        raise NotImplementedError

    def distance(self, z) -> np.ndarray:  # pragma: no cover - interface
        """Euclidean distance from each row of ``z`` to the set."""
        raise NotImplementedError

    def scaled(self, factor: float) -> "CompactSetSpec":  # pragma: no cover - interface
        raise NotImplementedError

    def volume(self) -> float:  # pragma: no cover - interface
        raise NotImplementedError

    def diameter(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def lattice_points(self, N: float = 1.0) -> np.ndarray:
        """``(N * self) ∩ Z^d`` with inclusive boundary."""
        lo, hi = self.bounds()
        cand = grid_points(np.floor(N * lo - _EPS), np.ceil(N * hi + _EPS))
        if len(cand) == 0:
            return cand
        return cand[self.contains(cand / N)]

    def to_dict(self) -> dict:  # pragma: no cover - interface
        raise NotImplementedError

    @staticmethod
    def from_dict(spec: dict) -> "CompactSetSpec":
        kind = spec.get("kind")
        if kind == "box":
            return Box(spec["lower"], spec["upper"])
        if kind == "ball":
            return Ball(spec["center"], spec["radius"])
        if kind == "union-of-boxes":
            return BoxUnion([Box(b["lower"], b["upper"]) for b in spec["boxes"]])
        raise PreconditionError(f"unknown set kind {kind!r}")


@dataclass(frozen=True, eq=False)
class Box(CompactSetSpec):
    """Closed axis-aligned box ``[lower, upper]``."""

    lower: np.ndarray
    upper: np.ndarray
    kind = "box"

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape or np.any(hi < lo):
            raise PreconditionError("box needs lower <= upper componentwise")
        check_dim(lo.size)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, d: int) -> "Box":
        return cls(np.full(d, lo), np.full(d, hi))

    @property
    def d(self) -> int:
        return self.lower.size

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((p >= self.lower - _EPS) & (p <= self.upper + _EPS), axis=1)

    def bounds(self):
        return self.lower.copy(), self.upper.copy()

    def distance(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        gap = np.maximum(np.maximum(self.lower - z, z - self.upper), 0.0)
        return np.sqrt((gap * gap).sum(axis=1))

    def scaled(self, factor: float) -> "Box":
        return Box(self.lower * factor, self.upper * factor)

    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def to_dict(self) -> dict:
        return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class Ball(CompactSetSpec):
    """Closed Euclidean ball."""

    center: np.ndarray
    radius: float
    kind = "ball"

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).ravel()
        check_dim(c.size)
        if not self.radius > 0:
            raise PreconditionError("ball radius must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def d(self) -> int:
        return self.center.size

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        r2 = ((p - self.center) ** 2).sum(axis=1)
        return r2 <= self.radius**2 * (1 + _EPS) + _EPS

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    def distance(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return np.maximum(np.linalg.norm(z - self.center, axis=1) - self.radius, 0.0)

    def scaled(self, factor: float) -> "Ball":
        return Ball(self.center * factor, self.radius * factor)

    def volume(self) -> float:
        d = self.d
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius**d

    def diameter(self) -> float:
        return 2 * self.radius

    def to_dict(self) -> dict:
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class BoxUnion(CompactSetSpec):
    """Finite union of closed boxes."""

    boxes: tuple = field(default_factory=tuple)
    kind = "union-of-boxes"

    def __post_init__(self):
        boxes = tuple(self.boxes)
        if not boxes:
            raise PreconditionError("union of boxes needs at least one box")
        if len({b.d for b in boxes}) != 1:
            raise PreconditionError("boxes of mixed dimension")
        object.__setattr__(self, "boxes", boxes)

    @property
    def d(self) -> int:
        return self.boxes[0].d

    def contains(self, points) -> np.ndarray:
        out = self.boxes[0].contains(points)
        for b in self.boxes[1:]:
            out |= b.contains(points)
        return out

    def bounds(self):
        lo = np.min([b.lower for b in self.boxes], axis=0)
        hi = np.max([b.upper for b in self.boxes], axis=0)
        return lo, hi

    def distance(self, z) -> np.ndarray:
        return np.min([b.distance(z) for b in self.boxes], axis=0)

    def scaled(self, factor: float) -> "BoxUnion":
        return BoxUnion(tuple(b.scaled(factor) for b in self.boxes))

    def volume(self) -> float:
        # inclusion-exclusion over intersections
        total = 0.0
        n = len(self.boxes)
        for k in range(1, n + 1):
            for combo in itertools.combinations(self.boxes, k):
                lo = np.max([b.lower for b in combo], axis=0)
                hi = np.min([b.upper for b in combo], axis=0)
                if np.all(hi > lo):
                    total += (-1) ** (k + 1) * float(np.prod(hi - lo))
        return total

    def to_dict(self) -> dict:
        return {"kind": "union-of-boxes", "boxes": [b.to_dict() for b in self.boxes]}


# ---------------------------------------------------------------------------
# blow-ups


@dataclass(frozen=True, eq=False)
class BlowUpPair:
    """Discrete blow-up ``A_N`` of ``A`` and the sphere ``S_N`` of the box ``[-M, M]^d``."""

    A: CompactSetSpec
    M: float
    N: int
    A_N: np.ndarray
    S_N: np.ndarray

    @property
    def d(self) -> int:
        return self.A.d

    @property
    def radius(self) -> int:
        """``floor(M N)``, the sup-radius of ``S_N``."""
        return int(math.floor(self.M * self.N))

    def window(self) -> DiscreteBox:
        """The closed ball ``B(0, floor(MN))`` containing both sets."""
        return DiscreteBox.ball(np.zeros(self.d, dtype=np.int64), self.radius)


def blow_up(A: CompactSetSpec, M: float, N: int) -> BlowUpPair:
    """Return ``A_N = (NA) ∩ Z^d`` and ``S_N = {|x|_inf = floor(MN)}``.

    Raises
    ------
    PreconditionError
        If ``A`` is not strictly inside ``(-M, M)^d`` or ``N < 1``.
    """
    if int(N) != N or N < 1:
        raise PreconditionError(f"N must be a positive integer, got {N}")
    lo, hi = A.bounds()
    if not (np.all(lo > -M) and np.all(hi < M)):
        raise PreconditionError("A must lie strictly inside the open box (-M, M)^d")
    N = int(N)
    A_N = A.lattice_points(N)
    S_N = sup_sphere(int(math.floor(M * N)), A.d)
    return BlowUpPair(A=A, M=float(M), N=N, A_N=A_N, S_N=S_N)
