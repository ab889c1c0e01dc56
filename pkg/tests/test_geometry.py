from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from oracles import brute_hull_2d, shoelace
from treereach.errors import CapabilityError, DegenerateHullError, InputError
from treereach.geometry import (BOUNDARY_INTERIOR, STRICT_INTERIOR, VERTEX, classify_points,
                                convex_hull, dedup_indices, hull_measure, write_hull_csv)


def test_square_with_edge_midpoint_and_centre():
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0], [0.5, 0.5]], dtype=float)
    h = convex_hull(pts)
    assert sorted(h.vertex_indices.tolist()) == [0, 1, 2, 3]
    assert hull_measure(h) == pytest.approx(1.0)
    labels = classify_points(h).labels
    assert labels.tolist() == [VERTEX] * 4 + [BOUNDARY_INTERIOR, STRICT_INTERIOR]


def test_vertices_are_counter_clockwise():
    rng = np.random.default_rng(0)
    h = convex_hull(rng.normal(size=(50, 2)))
    assert shoelace(h.vertices) > 0


def test_degenerate_clouds():
    with pytest.raises(DegenerateHullError):
        convex_hull([[0, 0], [1, 1], [2, 2], [3, 3]])
    with pytest.raises(DegenerateHullError):
        convex_hull([[0, 0], [1, 1]])
    with pytest.raises(DegenerateHullError):
        convex_hull([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])


def test_bad_inputs():
    with pytest.raises(CapabilityError):
        convex_hull(np.zeros((5, 4)))
    with pytest.raises(InputError):
        convex_hull([[0, 0], [1, np.nan], [0, 1]])
    with pytest.raises(InputError):
        convex_hull([1.0, 2.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=3, max_size=15))
def test_integer_clouds_match_brute_force(raw):
    """Integer coordinates stress duplicates and collinear runs."""
    pts = np.array(raw, dtype=float)
    expected = brute_hull_2d(pts)
    if len(expected) < 3:
        with pytest.raises(DegenerateHullError):
            convex_hull(pts)
        return
    h = convex_hull(pts)
    assert {tuple(p) for p in h.vertices} == {tuple(pts[i]) for i in expected}
    assert hull_measure(h) == pytest.approx(shoelace(pts[expected]), rel=1e-12)


def test_prefilter_path_matches_qhull():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(20000, 2))
    h = convex_hull(pts)
    ref = ConvexHull(pts)
    assert set(h.vertex_indices.tolist()) == set(ref.vertices.tolist())
    assert hull_measure(h) == pytest.approx(ref.volume, rel=1e-12)


def test_cube_volume_and_outward_normals():
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], float)
    pts = np.vstack([corners, [[0.5, 0.5, 0.5], [0.5, 0.5, 0.0]]])
    h = convex_hull(pts)
    assert hull_measure(h) == pytest.approx(1.0)
    assert sorted(h.vertex_indices.tolist()) == list(range(8))
    labels = classify_points(h).labels
    assert labels[8] == STRICT_INTERIOR and labels[9] == BOUNDARY_INTERIOR
    a, b, c = (h.points[h.facets[:, k]] for k in range(3))
    assert np.all((np.cross(b - a, c - a) * h.normals).sum(axis=1) > 0)


def test_sphere_cloud_volume_against_qhull():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(500, 3))
    assert hull_measure(convex_hull(pts)) == pytest.approx(ConvexHull(pts).volume, rel=1e-12)


def test_classify_external_points():
    h = convex_hull([[0, 0], [2, 0], [2, 2], [0, 2]])
    labels = classify_points(h, [[1, 1], [1, 0], [3, 3]]).labels
    assert labels.tolist() == [STRICT_INTERIOR, BOUNDARY_INTERIOR, BOUNDARY_INTERIOR]
    assert h.signed_distance([[3, 1]])[0] == pytest.approx(1.0)


def test_dedup_keeps_first_occurrence():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [1e-15, 0.0], [1.0, 1.0]])
    assert dedup_indices(pts).tolist() == [0, 1]


def test_duplicate_vertices_do_not_change_hull():
    pts = np.array([[0, 0], [1, 0], [0, 1], [1, 0], [0, 0]], float)
    h = convex_hull(pts)
    assert len(h.vertex_indices) == 3
    assert hull_measure(h) == pytest.approx(0.5)


def test_hull_csv_round_trip(tmp_path):
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.3, 0.4]], float)
    h = convex_hull(pts)
    write_hull_csv(h, tmp_path / "v.csv", tmp_path / "f.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0].startswith("# schema: treereach/1")
    verts = np.array([[float(x) for x in row] for row in csv.reader(lines[2:])])
    facets = [[int(x) for x in row] for row in csv.reader((tmp_path / "f.csv").read_text().splitlines()[2:])]
    assert np.allclose(verts, h.vertices)
    assert len(facets) == 4
    assert shoelace(verts) == pytest.approx(1.0)
