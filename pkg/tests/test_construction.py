import math

import numpy as np
import pytest

from kochtype.exceptions import ConstructionError, DepthLimitError, ScheduleError
from kochtype.services.construction import (
    CapTree,
    DyadicIndex,
    EdgeBallSpec,
    build_tree,
    containment_violations,
    densify,
    dyadic,
    edge_ball_radius_bounds,
    edge_ball_spec,
    edge_points,
    ifs_maps_gamma,
    neighbour_turn_violations,
    open_set_condition,
    polyline,
    sample_limit_set,
    separation_violations,
    weighted_limit_sample,
)
from kochtype.services.geometry import Segment
from kochtype.services.schedules import (
    AEpsSchedule,
    ConstantSchedule,
    GeometricSchedule,
    PowerSchedule,
    TableSchedule,
)


class TestDyadicIndex:
    def test_family(self):
        idx = dyadic(3, 5)
        assert idx.children == (DyadicIndex(4, 10), DyadicIndex(4, 11))
        assert idx.parent == DyadicIndex(2, 2)
        assert idx.ancestor(1) == DyadicIndex(1, 1)
        assert dyadic(0, 0).parent is None

    @pytest.mark.parametrize("n,i", [(-1, 0), (2, 4), (0, 1)])
    def test_invalid(self, n, i):
        with pytest.raises(ConstructionError):
            dyadic(n, i)


class TestBuildTree:
    def test_koch_root(self):
        tree = build_tree(ConstantSchedule(math.pi / 6), depth=1)
        cap = tree.cap(DyadicIndex(0, 0))
        assert cap.apex.x == pytest.approx(0.5)
        assert cap.apex.y == pytest.approx(math.sqrt(3) / 6)
        assert cap.orientation == 1
        child = tree.cap(DyadicIndex(1, 1))
        assert child.orientation == -1
        assert child.base.a == cap.apex

    def test_vertex_counts(self, aeps_tree):
        for n in range(aeps_tree.depth + 1):
            assert aeps_tree.vertices(n).shape == (2 ** n + 1, 2)
            assert aeps_tree.apexes(n).shape == (2 ** n, 2)
        assert len(aeps_tree.caps) == 2 ** 11 - 1

    def test_polyline_endpoints_fixed(self, geometric_tree):
        v = polyline(geometric_tree, geometric_tree.depth).vertices
        assert v[0].tolist() == [0.0, 0.0]
        assert v[-1].tolist() == [1.0, 0.0]

    def test_deterministic(self):
        a = build_tree(AEpsSchedule(0.01), depth=12).vertices(12)
        b = build_tree(AEpsSchedule(0.01), depth=12).vertices(12)
        assert a.tobytes() == b.tobytes()

    def test_vertices_immutable(self, aeps_tree):
        with pytest.raises(ValueError):
            aeps_tree.vertices(1)[0, 0] = 3.0

    def test_stage_out_of_range(self, aeps_tree):
        with pytest.raises(ConstructionError):
            aeps_tree.vertices(aeps_tree.depth + 1)

    def test_depth_guard(self):
        with pytest.raises(DepthLimitError) as info:
            build_tree(ConstantSchedule(0.1), depth=31)
        assert info.value.exit_code == 3

    def test_negative_depth(self):
        with pytest.raises(ConstructionError):
            build_tree(ConstantSchedule(0.1), depth=-1)

    def test_table_needs_every_angle(self):
        table = TableSchedule(entries={(0, 0): 0.3}, tails={(1, 0): ConstantSchedule(0.1)})
        with pytest.raises(ScheduleError):
            build_tree(table, depth=2)

    def test_non_unit_base(self):
        base = Segment((1.0, 1.0), (1.0, 3.0))
        tree = build_tree(ConstantSchedule(0.2), base=base, depth=3)
        v = tree.vertices(3)
        assert v[0].tolist() == [1.0, 1.0]
        assert v[-1].tolist() == [1.0, 3.0]
        # the root apex takes the larger x
        assert tree.apexes(0)[0][0] > 1.0

    @pytest.mark.parametrize("eps", [0.001, 0.01])
    def test_aeps_lengths_telescope(self, eps):
        tree = build_tree(AEpsSchedule(eps), depth=20)
        for n in range(21):
            length = polyline(tree, n).segment_lengths.sum()
            assert length == pytest.approx(math.sqrt(1.0 + 16.0 * n * eps ** 2), rel=1e-10)

    def test_aeps_cap_heights(self):
        eps = 0.01
        tree = build_tree(AEpsSchedule(eps), depth=6)
        for n in range(7):
            heights = [tree.cap(DyadicIndex(n, i)).height for i in range(2 ** n)]
            assert heights == pytest.approx([2.0 ** (1 - n) * eps] * 2 ** n, rel=1e-10)


class TestContainment:
    @pytest.mark.parametrize("schedule", [
        ConstantSchedule(math.pi / 6),
        ConstantSchedule(0.0),
        AEpsSchedule(0.05),
        GeometricSchedule(0.5, 0.5),
        PowerSchedule(0.3, 0.75),
        TableSchedule(entries={(0, 0): 0.5}, tails={(1, 0): ConstantSchedule(0.1), (1, 1): AEpsSchedule(0.01)}),
    ])
    def test_children_inside_parents(self, schedule):
        assert containment_violations(build_tree(schedule, depth=9)) == 0


class TestNeighbourTurns:
    @pytest.mark.parametrize("schedule", [
        ConstantSchedule(math.pi / 6),
        ConstantSchedule(0.0),
        AEpsSchedule(0.05),
        GeometricSchedule(0.5, 0.5),
        PowerSchedule(0.3, 0.75),
        TableSchedule(entries={(0, 0): 0.5}, tails={(1, 0): ConstantSchedule(0.1), (1, 1): AEpsSchedule(0.01)}),
    ])
    def test_turns_within_ancestor_bounds(self, schedule):
        assert neighbour_turn_violations(build_tree(schedule, depth=9)) == 0

    def test_turn_at_parent_apex(self, koch_tree):
        d = np.diff(koch_tree.vertices(2), axis=0)
        angles = np.arctan2(d[:, 1], d[:, 0])
        # siblings turn by 2 theta, cousins across the root apex by 4 theta
        assert abs(angles[1] - angles[0]) == pytest.approx(math.pi / 3)
        assert abs(angles[2] - angles[1]) == pytest.approx(2.0 * math.pi / 3)

    def test_moved_vertex_is_flagged(self):
        tree = build_tree(AEpsSchedule(0.01), depth=3)
        vertices = [tree.vertices(n).copy() for n in range(4)]
        vertices[2][2] += (0.0, 0.05)
        moved = CapTree(tree.schedule, tree.base_segment, 3, vertices,
                        [tree.apexes(n).copy() for n in range(4)], [tree.thetas(n).copy() for n in range(4)], tree.root_orientation)
        assert neighbour_turn_violations(moved, stage=2) > 0
        assert neighbour_turn_violations(tree, stage=2) == 0


class TestSeparation:
    def test_flat_tree_is_separated(self, rng):
        tree = build_tree(AEpsSchedule(0.005), depth=12)
        for n in range(1, 7):
            for i in rng.integers(0, 2 ** n, size=3):
                assert separation_violations(tree, DyadicIndex(n, int(i))) == 0

    def test_needs_flat_angles(self, koch_tree):
        with pytest.raises(ConstructionError):
            separation_violations(koch_tree, DyadicIndex(2, 1))

    def test_invalid_index(self):
        with pytest.raises(ConstructionError):
            separation_violations(build_tree(AEpsSchedule(0.005), depth=4), DyadicIndex(2, 4))


class TestEdgePoints:
    def test_count_and_order(self, aeps_tree):
        points = edge_points(aeps_tree)
        assert len(points) == 2 ** aeps_tree.depth + 1
        assert points[:2].tolist() == [[0.0, 0.0], [1.0, 0.0]]
        assert points[2].tolist() == aeps_tree.apexes(0)[0].tolist()
        deepest = {tuple(p) for p in aeps_tree.vertices(aeps_tree.depth).tolist()}
        assert {tuple(p) for p in points.tolist()} == deepest

    def test_depth_zero_has_base_endpoints_only(self):
        points = edge_points(build_tree(AEpsSchedule(0.01), depth=0))
        assert points.tolist() == [[0.0, 0.0], [1.0, 0.0]]
        assert len(edge_points(build_tree(AEpsSchedule(0.01), depth=5))) == 33

    def test_radius_bounds(self):
        radii = edge_ball_radius_bounds(0.01, 4)
        assert radii[0] == pytest.approx(2.0 ** -9 * math.sqrt(1.0 + 112 * 1e-4))
        assert radii[1:] / radii[:-1] == pytest.approx([0.25] * 3)

    def test_edge_balls(self, aeps_tree):
        spec = edge_ball_spec(aeps_tree, 0.01, count=64)
        assert isinstance(spec, EdgeBallSpec)
        assert len(spec.radii) == 64
        assert np.all(spec.radii <= edge_ball_radius_bounds(0.01, 64))
        assert np.all(spec.radii > 0)
        assert spec.covers(spec.points).all()

    def test_edge_balls_need_aeps(self, koch_tree):
        with pytest.raises(ConstructionError):
            edge_ball_spec(koch_tree, 0.01)

    def test_edge_balls_eps_mismatch(self, aeps_tree):
        with pytest.raises(ConstructionError):
            edge_ball_spec(aeps_tree, 0.02)

    def test_too_many_balls(self, aeps_tree):
        with pytest.raises(ConstructionError):
            edge_ball_spec(aeps_tree, 0.01, count=2 ** 11)


class TestSampling:
    def test_sample_size(self, aeps_tree):
        assert sample_limit_set(aeps_tree, 100).shape == (100, 2)
        with pytest.raises(ConstructionError):
            sample_limit_set(aeps_tree, 2 ** 10 + 1)

    def test_exclusion_removes_points(self, aeps_tree):
        spec = edge_ball_spec(aeps_tree, 0.01)
        full = sample_limit_set(aeps_tree, 1024)
        kept = sample_limit_set(aeps_tree, 1024, spec)
        assert len(kept) < len(full)
        assert not spec.covers(kept).any()

    def test_weights_sum_to_length(self, aeps_tree):
        points, weights = weighted_limit_sample(aeps_tree)
        assert len(points) == 2 ** 10
        assert weights.sum() == pytest.approx(math.sqrt(1.0 + 16.0 * 10 * 1e-4), rel=1e-10)

    def test_densify(self):
        out = densify([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)], 0.3)
        assert out[0].tolist() == [0.0, 0.0]
        assert out[-1].tolist() == [1.0, 1.0]
        gaps = np.hypot(*np.diff(out, axis=0).T)
        assert gaps.max() <= 0.3 + 1e-12
        assert len(out) == 4 + 4 + 1

    def test_densify_spacing(self):
        with pytest.raises(ConstructionError):
            densify([(0.0, 0.0), (1.0, 0.0)], 0.0)


class TestSelfSimilarity:
    @pytest.mark.parametrize("eps", [0.01, 0.05, 0.1, 0.2])
    def test_maps_rebuild_next_stage(self, eps):
        s1, s2 = ifs_maps_gamma(eps)
        tree = build_tree(ConstantSchedule(math.atan(2.0 * eps)), depth=11)
        for n in range(11):
            v = tree.vertices(n)
            rebuilt = np.vstack((s2.apply_many(v), s1.apply_many(v)[1:]))
            np.testing.assert_allclose(rebuilt, tree.vertices(n + 1), atol=1e-12)

    def test_contraction_ratio(self):
        s1, s2 = ifs_maps_gamma(0.1)
        assert s1.contraction == pytest.approx(math.sqrt(0.25 + 0.01))
        assert s2.contraction == pytest.approx(s1.contraction)

    @pytest.mark.parametrize("eps", [0.01, 0.1, 0.2])
    def test_open_set_condition(self, eps):
        report = open_set_condition(eps)
        assert report.images_inside
        assert report.disjoint

    def test_eps_range(self):
        with pytest.raises(ScheduleError):
            ifs_maps_gamma(0.25)
