import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pafr.errors import EmptyGridError, FeatureError
from pafr.features import (
    EDGE_DELTA_NAMES,
    EPS,
    boundary_loop_count,
    enrich_edges,
    grid_derived_face_stats,
    instance_features,
    spectral_connectivity,
)
from pafr.graph import EdgeSamples, build_graph

from conftest import flat_grid, make_edge, make_face, make_header, make_part

D_E = 4  # raw attribute width used by the shared builders


def delta(name):
    return D_E + EDGE_DELTA_NAMES.index(name)


class TestEnrichEdges:
    def test_area_ratio(self):
        g = make_part(2, [(0, 1)], areas=[2.0, 8.0])
        feats = enrich_edges(g)
        assert feats[0, delta("area_ratio")] == pytest.approx(0.25)

    def test_identical_twins_unit_ratios(self):
        g = make_part(2, [(0, 1)], areas=[3.0, 3.0])
        feats = enrich_edges(g)
        assert feats[0, delta("area_ratio")] == 1.0
        assert feats[0, delta("perimeter_ratio")] == 1.0

    def test_raw_attrs_prefix_preserved(self):
        g = make_part(2, [(0, 1)])
        feats = enrich_edges(g)
        assert np.array_equal(feats[0, :D_E], g.edges[0].attrs)

    def test_one_hot_blocks(self):
        g = make_part(2, [(0, 1)], surface="cylinder")
        feats = enrich_edges(g)
        assert feats[0, delta("edge_type=line")] == 1.0
        assert feats[0, delta("surface_s=cylinder")] == 1.0
        assert feats[0, delta("surface_t=cylinder")] == 1.0

    def test_bspline_surface_folds_into_other(self):
        g = make_part(2, [(0, 1)], surface="bspline")
        feats = enrich_edges(g)
        assert feats[0, delta("surface_s=other")] == 1.0

    def test_degrees(self):
        g = make_part(3, [(0, 1), (1, 2)])
        feats = enrich_edges(g)
        assert feats[0, delta("degree_s")] == 1
        assert feats[0, delta("degree_t")] == 2

    def test_coplanar_grids_dihedral_pi_convex(self):
        header = make_header(slots=None)
        samples = np.zeros((3, 15))
        samples[:, 0] = [1.0, 1.0, 1.0]
        samples[:, 1] = [0.0, 0.5, 1.0]
        samples[:, 12] = 1.0
        faces = [make_face(0, grid=flat_grid(x0=0.0)),
                 make_face(1, grid=flat_grid(x0=1.0))]
        edges = [make_edge(0, 0, 1, samples=EdgeSamples(m_res=3, samples=samples))]
        g = build_graph("coplanar", faces, edges, header)
        feats = enrich_edges(g)
        assert feats[0, delta("dihedral_angle")] == pytest.approx(math.pi)
        assert feats[0, delta("concavity_flag")] == 0.0

    def test_missing_slots_and_grids_rejected(self):
        header = make_header(slots=None)
        faces = [make_face(0), make_face(1)]
        g = build_graph("p", faces, [make_edge(0, 0, 1)], header)
        with pytest.raises(FeatureError):
            enrich_edges(g)

    def test_zero_area_guarded(self):
        g = make_part(2, [(0, 1)], areas=[0.0, 1.0])
        feats = enrich_edges(g)
        assert np.isfinite(feats).all()
        assert 0 < feats[0, delta("area_ratio")] <= 1

    def test_swap_symmetry(self):
        g1 = make_part(3, [(0, 1), (1, 2)], areas=[1.0, 4.0, 2.0])
        header = g1.header
        faces = [make_face(i, area=a) for i, a in enumerate([1.0, 4.0, 2.0])]
        edges = [make_edge(0, 1, 0), make_edge(1, 2, 1)]  # endpoints swapped
        g2 = build_graph("toy", faces, edges, header)
        f1, f2 = enrich_edges(g1), enrich_edges(g2)
        for name in ("area_ratio", "perimeter_ratio", "normalized_length",
                     "centroid_distance", "dihedral_angle"):
            assert f1[0, delta(name)] == f2[0, delta(name)]


class TestInstanceFeatures:
    def test_l_log_hand_value(self):
        g = make_part(1, [], areas=[4.0])
        z = instance_features(g, {0})
        assert z[3] == pytest.approx(math.log(2.0 + EPS), abs=1e-12)
        assert z[3] == pytest.approx(0.6931472, abs=1e-6)

    def test_singleton_degenerates(self):
        g = make_part(3, [(0, 1), (1, 2)])
        z = instance_features(g, {0})
        assert z[0] == 1 and z[1] == 0
        assert z[20] == 0.0  # spectral connectivity convention

    def test_whole_part_no_boundary(self):
        g = make_part(3, [(0, 1), (1, 2)])
        z = instance_features(g, {0, 1, 2})
        assert z[2] == 0 and z[21] == 0

    def test_empty_set_rejected(self):
        g = make_part(2, [(0, 1)])
        with pytest.raises(FeatureError):
            instance_features(g, set())

    def test_histograms_sum_to_one(self, small_dataset):
        from pafr.graph import ground_truth_instances

        _, parts = small_dataset
        for g in parts[:20]:
            for faces, _ in ground_truth_instances(g):
                z = instance_features(g, faces)
                assert z[4:10].sum() == pytest.approx(1.0, abs=1e-12)
                if z[1] > 0:  # internal edges exist
                    assert z[10:15].sum() == pytest.approx(1.0, abs=1e-12)
                else:
                    assert z[10:15].sum() == 0.0

    def test_permutation_invariance(self, small_dataset):
        from pafr.graph import ground_truth_instances

        _, parts = small_dataset
        g = parts[0]
        rng = np.random.default_rng(5)
        perm = rng.permutation(g.n)
        inv = np.argsort(perm)
        faces = [make_face(int(perm[f.face_id]), area=f.area,
                           surface=f.surface_type, inst=f.instance_id,
                           cls=f.semantic_class, attrs=f.attrs,
                           d_F=g.header.d_F)
                 for f in g.faces]
        faces.sort(key=lambda f: f.face_id)
        edges = [make_edge(e.edge_id, int(perm[e.face_s]), int(perm[e.face_t]),
                           attrs=e.attrs, etype=e.edge_type, length=e.length)
                 for e in g.edges]
        g2 = build_graph(g.part_id, faces, edges, g.header)
        for faces_set, _ in ground_truth_instances(g):
            mapped = {int(perm[v]) for v in faces_set}
            z1 = instance_features(g, faces_set)
            z2 = instance_features(g2, mapped)
            assert np.abs(z1 - z2).max() <= 1e-12


class TestSpectralConnectivity:
    def test_path_three_nodes(self):
        g = make_part(3, [(0, 1), (1, 2)])
        assert spectral_connectivity(g, {0, 1, 2}) == pytest.approx(1.0, abs=1e-9)

    def test_complete_k4(self):
        pairs = [(a, b) for a in range(4) for b in range(a + 1, 4)]
        g = make_part(4, pairs)
        assert spectral_connectivity(g, {0, 1, 2, 3}) == pytest.approx(4.0, abs=1e-9)

    def test_disconnected_pair(self):
        g = make_part(3, [(0, 1)])
        assert spectral_connectivity(g, {0, 2}) == 0.0

    def test_multi_edges_collapse(self):
        g = make_part(2, [(0, 1), (0, 1)])
        assert spectral_connectivity(g, {0, 1}) == pytest.approx(2.0, abs=1e-9)

    @given(st.data())
    @settings(max_examples=60, deadline=None)
    def test_positive_iff_connected(self, data):
        n = data.draw(st.integers(2, 12))
        pairs = data.draw(st.lists(
            st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(
                lambda p: p[0] != p[1]),
            max_size=20))
        g = make_part(n, pairs)
        nodes = data.draw(st.sets(st.integers(0, n - 1), min_size=2, max_size=n))
        lam2 = spectral_connectivity(g, nodes)
        # reachability oracle on the induced subgraph
        adj = {v: set() for v in nodes}
        for s, t in pairs:
            if s in nodes and t in nodes:
                adj[s].add(t)
                adj[t].add(s)
        start = min(nodes)
        seen, stack = {start}, [start]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        connected = seen == set(nodes)
        assert (lam2 > 0) == connected
        assert lam2 >= 0.0


class TestBoundaryLoops:
    def test_whole_part_zero(self):
        g = make_part(3, [(0, 1), (1, 2)])
        assert boundary_loop_count(g, {0, 1, 2}) == 0

    def test_single_ring_one_loop(self):
        # hole faces {3,4} attached to stock face 0 by two boundary edges
        # sharing that stock face -> a single loop
        g = make_part(5, [(0, 1), (1, 2), (3, 4), (0, 3), (0, 4)])
        assert boundary_loop_count(g, {3, 4}) == 1

    def test_two_rings_on_different_stock_faces(self):
        # two single-face holes (3 and 4) attached to different stock faces
        g = make_part(5, [(0, 1), (1, 2), (0, 3), (1, 4)])
        assert boundary_loop_count(g, {3, 4}) == 2


class TestGridStats:
    def test_uniform_flat_grid(self):
        centroid, normal, frac = grid_derived_face_stats(flat_grid())
        assert normal.tolist() == [0.0, 0.0, 1.0]
        assert frac == 1.0
        assert centroid == pytest.approx([0.5, 0.5, 0.0])

    def test_half_mask(self):
        mask = [[1, 1, 1], [1, 1, 1], [0, 0, 0]]
        centroid, _, frac = grid_derived_face_stats(flat_grid(mask=mask))
        assert frac == pytest.approx(2 / 3)
        assert centroid[0] == pytest.approx(0.25)  # mean over first two rows only

    def test_antipodal_normals_cancel(self):
        grid = flat_grid()
        samples = grid.samples.copy()
        samples[0, :, 3:6] = (0, 0, 1)
        samples[1, :, 3:6] = (0, 0, -1)
        samples[2, :, 6] = 0.0  # drop the third row entirely
        from pafr.graph import FaceGrid

        _, normal, _ = grid_derived_face_stats(FaceGrid(3, 3, samples))
        assert np.linalg.norm(normal) == 0.0

    def test_all_invalid_grid(self):
        mask = [[0] * 3] * 3
        with pytest.raises(EmptyGridError):
            grid_derived_face_stats(flat_grid(mask=mask))
