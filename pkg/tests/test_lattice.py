import numpy as np
import pytest

from rilab.errors import PreconditionError
from rilab.lattice import (Ball, Box, BoxUnion, CompactSetSpec, DiscreteBox, PointIndex, blow_up,
                           grid_points, inner_boundary, neighbors, outer_boundary, sup_sphere)


def test_neighbors_and_dimension_guard():
    nb = neighbors([0, 0, 0])
    assert nb.shape == (6, 3)
    assert np.all(np.abs(nb).sum(axis=1) == 1)
    with pytest.raises(PreconditionError):
        neighbors([0, 0])


def test_grid_points_c_order():
    g = grid_points([0, 0, 0], [1, 2, 1])
    assert len(g) == 12
    assert np.array_equal(g, g[np.lexsort(g.T[::-1])])


def test_point_index_lookup_and_duplicates():
    pts = grid_points([-1, -1, -1], [1, 1, 1])
    idx = PointIndex(pts)
    assert np.array_equal(idx.lookup(pts), np.arange(27))
    assert idx.lookup([[5, 5, 5]])[0] == -1
    with pytest.raises(PreconditionError):
        PointIndex(np.vstack([pts, pts[:1]]))


def test_boundaries_of_a_cube():
    pts = DiscreteBox((0, 0, 0), 4).points()
    assert inner_boundary(pts).sum() == 4**3 - 2**3
    # outer boundary of an n-cube: 2d faces of n^(d-1) points
    assert len(outer_boundary(pts)) == 6 * 16


def test_discrete_box_from_interval():
    b = DiscreteBox.from_interval((0, 0, 0), -1.6, 9.6)
    assert b.lower.tolist() == [-1, -1, -1] and b.upper.tolist() == [9, 9, 9]
    with pytest.raises(PreconditionError):
        DiscreteBox.from_interval((0, 0, 0), 0.2, 0.9)


def test_sup_sphere_counts():
    s = sup_sphere(3, 3)
    assert len(s) == 7**3 - 5**3
    assert np.all(np.abs(s).max(axis=1) == 3)


def test_set_specs_roundtrip_and_geometry():
    box = Box.cube(-1, 1, 3)
    ball = Ball(np.zeros(3), 1.0)
    union = BoxUnion((Box.cube(0, 1, 3), Box([0.5, 0, 0], [2, 1, 1])))
    for s in (box, ball, union):
        t = CompactSetSpec.from_dict(s.to_dict())
        assert t.to_dict() == s.to_dict()
    assert box.volume() == pytest.approx(8.0)
    assert union.volume() == pytest.approx(2.0)
    assert ball.contains([[0, 0, 1.0]])[0] and not ball.contains([[0, 0, 1.01]])[0]
    assert box.distance([[3.0, 0, 0]])[0] == pytest.approx(2.0)
    with pytest.raises(PreconditionError):
        CompactSetSpec.from_dict({"kind": "torus"})


def test_blow_up_counts():
    pair = blow_up(Box.cube(-1, 1, 3), 2, 3)
    assert len(pair.A_N) == 7**3
    assert pair.radius == 6
    assert len(pair.S_N) == 13**3 - 11**3
    with pytest.raises(PreconditionError):
        blow_up(Box.cube(-2, 2, 3), 2, 3)
