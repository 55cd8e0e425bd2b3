import io
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blm.mesh import (Geometry, Mesh, MeshError, compute_elem_width, compute_wall_distance,
                      generate_channel_mesh, load_mesh, save_mesh, signed_areas)

from conftest import square_mesh


def test_geometry_defaults():
    g = Geometry()
    assert g.channel_min == (0.0, 0.0) and g.channel_max == (4.0, 1.0)
    assert g.obstacle_min == (0.5, 0.45) and g.obstacle_max == (0.6, 0.55)


@pytest.mark.parametrize("kw", [
    dict(channel_min=(0, 0), channel_max=(4, 0)),
    dict(obstacle_min=(0.5, 0.0), obstacle_max=(0.6, 0.55)),
    dict(obstacle_min=(0.5, 0.45), obstacle_max=(0.5, 0.55)),
    dict(obstacle_min=(3.9, 0.45), obstacle_max=(4.0, 0.55)),
])
def test_geometry_rejects_degenerate(kw):
    with pytest.raises(ValueError):
        Geometry(**kw)


def test_unit_square_coarsest():
    m = generate_channel_mesh(Geometry.unit_square(), 1.5)
    assert m.n_vertices == 4 and m.n_triangles == 2
    assert m.area == pytest.approx(1.0, rel=1e-15)


def test_benchmark_geometry_area(channel_coarse):
    assert abs(channel_coarse.area - 3.99) <= 1e-12 * 3.99
    assert np.all(signed_areas(channel_coarse.vertices, channel_coarse.triangles) > 0)


def test_refinement_increases_triangles():
    g = Geometry()
    assert generate_channel_mesh(g, 0.2).n_triangles > generate_channel_mesh(g, 0.4).n_triangles


def test_width_near_obstacle_respects_refinement():
    h, r = 0.2, 2.0
    m = generate_channel_mesh(target_h=h, refine_factor=r)
    centers = m.vertices[m.triangles].mean(axis=1)
    touching = np.isin(m.triangles, np.unique(m.edges[m.boundary_edges[
        m.boundary_tags == "obstacle"]])).any(axis=1)
    assert touching.any()
    assert np.all(m.elem_width[touching] <= h / r + 1e-12)
    assert np.all(centers[:, 0] >= 0)


def test_edge_consistency(channel_coarse):
    counts = channel_coarse.edge_triangle_counts
    assert set(np.unique(counts)) <= {1, 2}
    boundary = np.zeros(channel_coarse.n_edges, bool)
    boundary[channel_coarse.boundary_edges] = True
    assert np.array_equal(counts == 1, boundary)


def test_boundary_tags_partition(channel_coarse):
    m = channel_coarse
    assert len(np.unique(m.boundary_edges)) == len(m.boundary_edges)
    assert set(m.boundary_tags) == {"inflow", "outflow", "wall", "obstacle"}
    x = m.vertices[m.edges[m.boundary_edges]].mean(axis=1)
    assert np.allclose(x[m.boundary_tags == "inflow", 0], 0.0)
    assert np.allclose(x[m.boundary_tags == "outflow", 0], 4.0)


def test_wall_distance_examples(channel_coarse):
    pts = np.array([[2.0, 0.5], [0.45, 0.5], [1.3, 0.0]])
    d = compute_wall_distance(channel_coarse, pts)
    assert d[0] == pytest.approx(0.5, abs=1e-15)
    assert d[1] == pytest.approx(0.05, abs=1e-15)
    assert d[2] == 0.0


def test_wall_distance_zero_on_solid_nodes_only(channel_coarse):
    m = channel_coarse
    solid = m.boundary_nodes(("wall", "obstacle"))
    assert np.all(m.wall_distance[solid] == 0.0)
    others = np.setdiff1d(np.arange(m.n_p2_nodes), solid)
    assert np.all(m.wall_distance[others] > 0)
    # inflow is not a wall: the inflow midpoint at y = 0.5 sits 0.5 from the walls
    x = m.p2_nodes
    k = np.flatnonzero((x[:, 0] == 0.0) & np.isclose(x[:, 1], 0.5))
    if len(k):
        assert m.wall_distance[k[0]] == pytest.approx(0.5)


def test_wall_distance_lipschitz(channel_coarse):
    m = channel_coarse
    d = m.wall_distance
    a, b = m.edges[:, 0], m.edges[:, 1]
    length = np.linalg.norm(m.vertices[a] - m.vertices[b], axis=1)
    assert np.all(np.abs(d[a] - d[b]) <= length + 1e-14)


def test_wall_distance_requires_walls():
    m = square_mesh(2).with_tags({"wall": "inflow"})
    with pytest.raises(MeshError):
        compute_wall_distance(m)


def test_elem_width_examples():
    right = Mesh.from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]],
                             [(0, 1, "wall"), (1, 2, "wall"), (2, 0, "wall")])
    assert compute_elem_width(right)[0] == pytest.approx(math.sqrt(2), rel=1e-15)
    s = 0.7
    eq = Mesh.from_arrays([[0, 0], [s, 0], [s / 2, s * math.sqrt(3) / 2]], [[0, 1, 2]],
                          [(0, 1, "wall"), (1, 2, "wall"), (2, 0, "wall")])
    assert compute_elem_width(eq)[0] == pytest.approx(s, rel=1e-15)
    assert np.allclose(square_mesh(2).elem_width, math.sqrt(2) / 2, rtol=1e-15)


def test_save_load_roundtrip(channel_coarse):
    text = save_mesh(channel_coarse)
    m2 = load_mesh(text)
    assert np.array_equal(m2.vertices, channel_coarse.vertices)
    assert np.array_equal(m2.triangles, channel_coarse.triangles)
    assert list(m2.boundary_pairs()) == list(channel_coarse.boundary_pairs())
    assert save_mesh(m2) == text


def test_save_load_two_triangles_stream():
    m = generate_channel_mesh(Geometry.unit_square(), 1.5)
    buf = io.StringIO()
    save_mesh(m, buf)
    buf.seek(0)
    m2 = load_mesh(buf)
    assert np.array_equal(m2.triangles, m.triangles)


def test_load_rejects_out_of_range_index():
    text = ("mesh2d 1\nvertices 3\n0 0\n1 0\n0 1\ntriangles 1\n0 1 7\n"
            "boundary 0\n")
    with pytest.raises(MeshError, match="line 7"):
        load_mesh(text)


def test_load_rejects_bad_header():
    with pytest.raises(MeshError, match="line 1"):
        load_mesh("mesh3d 1\n")


def test_clockwise_triangle_reject_or_fix():
    text = ("mesh2d 1\nvertices 4\n0 0\n1 0\n1 1\n0 1\ntriangles 2\n0 1 2\n0 3 2\n"
            "boundary 4\n0 1 wall\n1 2 outflow\n2 3 wall\n3 0 inflow\n")
    with pytest.raises(MeshError, match="line 9"):
        load_mesh(text)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        m = load_mesh(text, orientation="fix")
    assert any("reoriented" in str(w.message) for w in rec)
    assert np.all(signed_areas(m.vertices, m.triangles) > 0)
    assert m.area == pytest.approx(1.0)


@settings(max_examples=15, deadline=None)
@given(h=st.floats(0.15, 0.8), r=st.floats(1.0, 2.5))
def test_generated_mesh_invariants(h, r):
    m = generate_channel_mesh(target_h=h, refine_factor=r)
    assert abs(m.area - 3.99) <= 1e-12 * 3.99
    assert np.all(signed_areas(m.vertices, m.triangles) > 0)
    assert np.all(m.elem_width > 0)
    assert set(np.unique(m.edge_triangle_counts)) <= {1, 2}
