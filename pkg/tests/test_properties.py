import math

import numpy as np
import pytest

from kochtype.exceptions import ConstructionError, ResolutionError, ScheduleError
from kochtype.models import FitMode, LinePolicy, PropertyId
from kochtype.services.analysis import delta1_bound
from kochtype.services.construction import build_tree, sample_limit_set, weighted_limit_sample
from kochtype.services.gallery import gallery
from kochtype.services.properties import (
    BallIndex,
    admissible_scales,
    enclosing_radius,
    property_service,
    witness_beta,
)
from kochtype.services.schedules import AEpsSchedule, ConstantSchedule

LADDER = [2.0 ** -k for k in range(1, 7)]


@pytest.fixture(scope="module")
def koch_sample():
    tree = build_tree(ConstantSchedule(math.pi / 6), depth=10)
    return sample_limit_set(tree, 2 ** 10)


@pytest.fixture(scope="module")
def aeps_sample():
    tree = build_tree(AEpsSchedule(0.01), depth=12)
    return sample_limit_set(tree, 2 ** 12)


def pick(points, count, seed=11):
    rng = np.random.default_rng(seed)
    return points[rng.choice(len(points), count, replace=False)]


class TestBallIndex:
    def test_closed_ball(self):
        index = BallIndex([(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)])
        assert index.indices((0.0, 0.0), 1.0).tolist() == [0, 1]
        assert len(index.ball((5.0, 5.0), 1.0)) == 0

    def test_enclosing_radius(self):
        center, radius = enclosing_radius([(0.0, 0.0), (2.0, 0.0), (1.0, 1.0)])
        assert center == (1.0, 0.5)
        assert radius == pytest.approx(math.hypot(1.0, 0.5))


class TestFlatnessProfile:
    def test_line_is_flat(self, line_points):
        profile = property_service.flatness_profile(line_points, (0.3, 0.0), LADDER)
        assert all(e.beta_through == pytest.approx(0.0, abs=1e-12) for e in profile.entries)
        assert [e.rho for e in profile.entries] == LADDER

    def test_circle(self):
        t = np.linspace(0.0, 2.0 * math.pi, 1000, endpoint=False)
        circle = np.column_stack((np.cos(t), np.sin(t)))
        entry = property_service.flatness_profile(circle, (1.0, 0.0), [2.0]).entries[0]
        assert entry.beta_free == pytest.approx(0.5, abs=1e-3)
        assert entry.beta_through == pytest.approx(0.5, abs=1e-3)

    def test_free_below_through(self, koch_sample):
        for center in pick(koch_sample, 5):
            for entry in property_service.flatness_profile(koch_sample, center, LADDER).entries:
                assert entry.beta_free <= entry.beta_through + 1e-12

    def test_empty_ball(self, line_points):
        entry = property_service.flatness_profile(line_points, (0.5, 5.0), [1.0]).entries[0]
        assert entry.empty
        assert entry.point_count == 0
        assert entry.beta_through is None

    def test_free_line_reported(self, koch_sample):
        profile = property_service.flatness_profile(koch_sample, koch_sample[100], LADDER, constrain_through_center=False)
        assert not profile.constrained

    def test_ladder_must_decrease(self, line_points):
        with pytest.raises(ConstructionError):
            property_service.flatness_profile(line_points, (0.5, 0.0), [0.1, 0.1])

    def test_resolution_guard(self, line_points):
        with pytest.raises(ResolutionError):
            property_service.flatness_profile(line_points, (0.5, 0.0), [0.1, 0.001], resolution=1e-3)


class TestCheckProperty:
    def test_line_holds_everywhere(self, line_points):
        for prop in PropertyId:
            report = property_service.check_property(line_points, prop, 0.01, [(0.25, 0.0), (0.75, 0.0)], LADDER)
            assert report.holds, prop

    def test_default_fit_modes(self, line_points):
        centers = [(0.5, 0.0)]
        assert property_service.check_property(line_points, "ii", 0.1, centers, LADDER).fit_mode == FitMode.FREE
        assert property_service.check_property(line_points, "i", 0.1, centers, LADDER).fit_mode == FitMode.THROUGH
        assert property_service.check_property(line_points, "vii", 0.1, centers, LADDER).fit_mode == FitMode.THROUGH
        report = property_service.check_property(line_points, "vi", 0.1, centers, LADDER)
        assert report.line_policy == LinePolicy.FINEST
        assert report.verdicts[0].reused_line.chosen_at_rho == LADDER[-1]

    def test_koch_fails_with_witness(self, koch_sample):
        report = property_service.check_property(koch_sample, "i", 0.05, pick(koch_sample, 8), LADDER)
        assert not report.holds
        for verdict in report.failures:
            witness = verdict.witness
            assert witness.beta > witness.delta
            assert witness_beta(koch_sample, witness) == pytest.approx(witness.beta, abs=1e-9)

    def test_free_witness_rechecks(self, koch_sample):
        report = property_service.check_property(koch_sample, "ii", 0.02, pick(koch_sample, 4), LADDER, neighbor_count=3)
        assert report.failures
        for verdict in report.failures:
            assert witness_beta(koch_sample, verdict.witness) == pytest.approx(verdict.witness.beta, abs=1e-9)

    def test_all_delta_variant(self, koch_sample):
        report = property_service.check_property(koch_sample, "iii", 0.5, pick(koch_sample, 4), LADDER, delta_ladder=[0.2, 0.05])
        assert report.delta_ladder == [0.5, 0.2, 0.05]
        for verdict in report.failures:
            assert verdict.witness.delta in (0.5, 0.2, 0.05)
            assert verdict.witness.beta > verdict.witness.delta

    def test_invalid_delta(self, line_points):
        with pytest.raises(ConstructionError):
            property_service.check_property(line_points, "i", 0.0, [(0.5, 0.0)], LADDER)

    def test_unknown_property(self, line_points):
        with pytest.raises(ValueError):
            property_service.check_property(line_points, "ix", 0.1, [(0.5, 0.0)], LADDER)

    def test_rigid_motion_invariance(self, aeps_sample):
        centers = pick(aeps_sample, 6)
        moved = np.column_stack((-aeps_sample[:, 1], aeps_sample[:, 0])) + (3.0, -2.0)
        moved_centers = np.column_stack((-centers[:, 1], centers[:, 0])) + (3.0, -2.0)
        for c, mc in zip(centers, moved_centers):
            a = property_service.flatness_profile(aeps_sample, c, LADDER)
            b = property_service.flatness_profile(moved, mc, LADDER)
            for ea, eb in zip(a.entries, b.entries):
                assert eb.beta_through == pytest.approx(ea.beta_through, abs=1e-9)
                assert eb.beta_free == pytest.approx(ea.beta_free, abs=1e-9)

    def test_scaling_invariance(self, koch_sample):
        centers = pick(koch_sample, 6)
        first = property_service.check_property(koch_sample, "i", 0.1, centers, LADDER)
        second = property_service.check_property(koch_sample * 4.0, "i", 0.1, centers * 4.0, [4.0 * s for s in LADDER])
        assert [v.holds for v in first.verdicts] == [v.holds for v in second.verdicts]
        for a, b in zip(first.verdicts, second.verdicts):
            if a.witness is not None:
                assert b.witness.beta == pytest.approx(a.witness.beta, abs=1e-9)


class TestUniformProperty:
    def test_constant_height_family_is_uniformly_flat(self):
        eps = 0.005
        sample = gallery("gamma", {"eps": eps, "depth": 14}, count=2 ** 14)
        delta = 1.1 * math.sin(4.0 * math.atan(2.0 * eps))
        scales = [2.0 ** -k for k in range(2, 11)]
        report = property_service.check_property(
            sample.points, "v", delta, pick(sample.points, 20), scales, resolution=sample.resolution
        )
        assert report.contained_in_ball
        assert report.scales[0] == pytest.approx(report.rho0)
        assert sum(v.tested_balls for v in report.verdicts) >= 100
        assert report.holds

    def test_shrinking_angles_fail_at_root_apex(self, aeps_sample):
        eps = 0.01
        bound = delta1_bound(eps)
        apex = (0.5, 2.0 * eps)
        report = property_service.check_property(aeps_sample, "v", 0.5 * bound, [apex], [0.25], rho0=0.5)
        verdict = report.verdicts[0]
        assert not verdict.holds
        assert verdict.witness.rho == 0.5
        assert verdict.witness.beta >= 0.95 * bound

    def test_rho0_default_encloses_sample(self, line_points):
        report = property_service.check_property(line_points, "viii", 0.1, [(0.5, 0.0)], LADDER)
        assert report.rho0 == pytest.approx(0.5)
        assert report.contained_in_ball
        assert report.holds

    def test_small_rho0_is_not_contained(self, line_points):
        report = property_service.check_property(line_points, "v", 0.1, [(0.5, 0.0)], [0.1], rho0=0.2)
        assert report.contained_in_ball is False
        assert not report.holds


class TestStrongVariants:
    def test_horizontal_lines_satisfy_vii(self):
        sample = gallery("N", count=100_000, box=(0.1, 0.0, 1.0, 1.1))
        centers = [(0.5, 1.0), (0.5, 0.5)]
        scales = [2.0 ** -k for k in range(3, 7)]
        report = property_service.check_property(sample.points, "vii", 0.1, centers, scales)
        assert report.holds
        for verdict in report.verdicts:
            angle = verdict.reused_line.angle
            assert min(angle, math.pi - angle) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("mode", ["through", "free"])
    def test_horizontal_lines_hold_in_both_modes(self, mode):
        sample = gallery("N", count=100_000, box=(0.1, 0.0, 1.0, 1.1))
        scales = [2.0 ** -k for k in range(3, 7)]
        report = property_service.check_property(sample.points, "vii", 0.1, [(0.5, 1.0), (0.5, 0.5)], scales, fit_mode=mode)
        assert report.fit_mode == FitMode(mode)
        assert report.holds

    @pytest.mark.parametrize("mode", ["through", "free"])
    def test_line_fan_fails_at_origin_in_both_modes(self, mode):
        sample = gallery("lambda-delta", {"delta": 0.5}, count=40_000, box=(-1.0, -1.0, 1.0, 1.0))
        scales = [2.0 ** -k for k in range(2, 6)]
        report = property_service.check_property(sample.points, "vii", 0.1, [(0.0, 0.0)], scales, fit_mode=mode)
        assert report.fit_mode == FitMode(mode)
        assert not report.holds

    def test_untranslated_line_sees_parallel_offset(self):
        x = np.linspace(0.0, 1.0, 2001)
        points = np.vstack((np.column_stack((x, np.zeros_like(x))), np.column_stack((x, np.full_like(x, 0.04)))))
        scales = [0.5, 0.03, 0.02]

        def check(mode):
            return property_service.check_property(points, "vii", 0.1, [(0.5, 0.0)], scales, fit_mode=mode, neighbor_count=40)

        assert check("through").holds
        report = check("free")
        witness = report.verdicts[0].witness
        assert not report.holds
        assert witness.center[1] == pytest.approx(0.04)
        assert witness.rho == 0.03
        assert witness.beta == pytest.approx(0.04 / 0.03)
        assert witness.line_offset == pytest.approx(0.0, abs=1e-12)

    def test_coarsest_policy(self, koch_sample):
        center = koch_sample[300]
        report = property_service.check_property(koch_sample, "vi", 0.5, [center], LADDER, line_policy="coarsest")
        assert report.verdicts[0].reused_line.chosen_at_rho == LADDER[0]


class TestImplications:
    @pytest.mark.parametrize("name,params,box", [
        ("gamma", {"eps": 0.1, "depth": 10}, None),
        ("aeps", {"eps": 0.01, "depth": 10}, None),
        ("lambda-delta", {"delta": 0.5}, (-1.0, -1.0, 1.0, 1.0)),
    ])
    def test_verdict_chains(self, name, params, box):
        points = gallery(name, params, count=40_000, box=box).points
        centers = pick(points, 6)
        scales = [2.0 ** -k for k in range(2, 6)]

        def holds(prop, **options):
            return [v.holds for v in property_service.check_property(points, prop, 0.1, centers, scales, **options).verdicts]

        i, iii = holds("i"), holds("iii", delta_ladder=[0.05])
        iv = holds("iv", delta_ladder=[0.05], fit_mode="through", neighbor_count=4)
        vi, vii = holds("vi"), holds("vii", neighbor_count=4)
        for k in range(len(centers)):
            assert not vii[k] or vi[k]
            assert not vi[k] or i[k]
            assert not iv[k] or iii[k]
            assert not iii[k] or i[k]

    @pytest.mark.parametrize("name,params,box", [
        ("gamma", {"eps": 0.1, "depth": 10}, None),
        ("aeps", {"eps": 0.01, "depth": 10}, None),
        ("lambda-delta", {"delta": 0.5}, (-1.0, -1.0, 1.0, 1.0)),
    ])
    def test_uniform_chains_share_the_rho0_ladder(self, name, params, box):
        points = gallery(name, params, count=40_000, box=box).points
        centers = pick(points, 6)
        uniform = property_service.check_property(points, "viii", 0.1, centers, [2.0 ** -k for k in range(2, 6)])
        ladder = uniform.scales
        assert ladder[0] == uniform.rho0

        def holds(prop, **options):
            return [v.holds for v in property_service.check_property(points, prop, 0.1, centers, ladder, **options).verdicts]

        viii = [v.holds for v in uniform.verdicts]
        v = [r.holds for r in property_service.check_property(points, "v", 0.1, centers, ladder).verdicts]
        i, vi, vii = holds("i"), holds("vi"), holds("vii", neighbor_count=4)
        for k in range(len(centers)):
            assert not viii[k] or vi[k]
            assert not vii[k] or vi[k]
            assert not vi[k] or i[k]
            assert not v[k] or i[k]


class TestDeltaLadder:
    def test_line_holds_at_every_delta(self, line_points):
        report = property_service.delta_ladder_check(line_points, "i", [0.2, 0.1, 0.05], [(0.5, 0.0)], scales=LADDER)
        assert report.finest_holding_delta == 0.05
        assert report.vacuous == [False] * 3

    def test_stage_rule_ladder(self):
        schedule = AEpsSchedule(0.002)
        tree = build_tree(schedule, depth=12)
        points, _ = weighted_limit_sample(tree)
        resolution = float(np.hypot(*np.diff(tree.vertices(12), axis=0).T).max())
        report = property_service.delta_ladder_check(
            points, "ii", [0.2, 0.1, 0.08], pick(points, 5),
            scale_rule=lambda d: admissible_scales(schedule, d, 12, resolution),
            neighbor_count=4
        )
        assert report.vacuous == [False] * 3
        assert all(r.holds for r in report.reports)
        assert report.finest_holding_delta == 0.08

    def test_vacuous_ladder(self, aeps_sample):
        schedule = AEpsSchedule(0.01)
        report = property_service.delta_ladder_check(
            aeps_sample, "ii", [0.2, 0.1, 0.05], pick(aeps_sample, 3),
            scale_rule=lambda d: admissible_scales(schedule, d, 16)
        )
        assert report.vacuous == [True] * 3
        assert report.finest_holding_delta is None
        assert all(r.holds and r.scales == [] for r in report.reports)

    def test_base_property(self, line_points):
        with pytest.raises(ConstructionError):
            property_service.delta_ladder_check(line_points, "v", [0.1], [(0.5, 0.0)], scales=LADDER)

    def test_ladder_order(self, line_points):
        with pytest.raises(ConstructionError):
            property_service.delta_ladder_check(line_points, "i", [0.1, 0.2], [(0.5, 0.0)], scales=LADDER)


class TestAdmissibleScales:
    def test_first_stage(self):
        schedule = AEpsSchedule(0.002)
        scales = admissible_scales(schedule, 0.2, 8)
        assert len(scales) == 6
        assert scales[0] == pytest.approx(1.5 * 2.0 ** -3 * math.sqrt(1.0 + 16.0 * 3 * 0.002 ** 2))
        assert all(b < a for a, b in zip(scales, scales[1:]))

    def test_koch_angle_never_qualifies(self):
        assert admissible_scales(ConstantSchedule(math.pi / 6), 0.5, 12) == []

    def test_resolution_truncates(self):
        full = admissible_scales(AEpsSchedule(0.002), 0.2, 12)
        cut = admissible_scales(AEpsSchedule(0.002), 0.2, 12, resolution=1e-3)
        assert cut == full[:len(cut)]
        assert all(r >= 4e-3 for r in cut)
        assert len(cut) < len(full)

    def test_errors(self):
        with pytest.raises(ScheduleError):
            admissible_scales(AEpsSchedule(0.01), 0.0, 8)


class TestLocalFiniteness:
    def test_line_density_is_one(self, line_points):
        weights = np.full(len(line_points), 1.0 / (len(line_points) - 1))
        report = property_service.local_finiteness_scan(line_points, weights, [(0.5, 0.0)], [0.25, 0.125, 0.0625])
        assert [row.ratio for row in report.rows] == pytest.approx([1.0] * 3, abs=0.01)
        assert report.diverging == [False]

    def test_atom_diverges(self, line_points):
        points = np.vstack((line_points, [(0.5, 0.0)]))
        weights = np.append(np.full(len(line_points), 1.0 / (len(line_points) - 1)), 1.0)
        report = property_service.local_finiteness_scan(points, weights, [(0.5, 0.0)], [0.5, 0.1, 0.01])
        assert report.diverging == [True]

    def test_lines_through_center_grow_with_count(self):
        x = np.linspace(-1.0, 1.0, 4001)
        ratios = []
        for count in (5, 20):
            points = np.vstack([np.column_stack((x, 0.5 * x / n)) for n in range(1, count + 1)])
            weights = np.concatenate([np.full(len(x), (x[1] - x[0]) * math.sqrt(1.0 + (0.5 / n) ** 2)) for n in range(1, count + 1)])
            report = property_service.local_finiteness_scan(points, weights, [(0.0, 0.0)], [0.25])
            ratios.append(report.rows[0].ratio)
        assert ratios[1] > 3.5 * ratios[0]
        assert ratios == pytest.approx([5.0, 20.0], rel=0.01)

    def test_weights_must_match(self, line_points):
        with pytest.raises(ConstructionError):
            property_service.local_finiteness_scan(line_points, [1.0], [(0.5, 0.0)], [0.1])


class TestFlatnessRows:
    def test_rows_mark_failures(self, koch_sample):
        report = property_service.check_property(koch_sample, "i", 0.05, pick(koch_sample, 3), LADDER)
        rows = property_service.flatness_rows(koch_sample, report)
        assert len(rows) == 3 * len(LADDER)
        assert {row["verdict"] for row in rows} <= {"pass", "fail", "empty"}
        assert sum(row["verdict"] == "fail" for row in rows) == len(report.failures)
