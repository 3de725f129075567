import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kochtype.exceptions import InputFileError, ScheduleError, SpecParseError
from kochtype.services.schedules import (
    AEpsSchedule,
    ConstantSchedule,
    GeometricSchedule,
    PowerSchedule,
    TableSchedule,
    load_table_schedule,
    parse_schedule_spec,
)


def write_table(tmp_path, document, name="table.json"):
    path = tmp_path / name
    path.write_text(json.dumps(document))
    return str(path)


class TestParsing:
    @pytest.mark.parametrize("text,expected", [
        ("const:theta=0.5235987755982988", ConstantSchedule(math.pi / 6)),
        ("aeps:eps=0.01", AEpsSchedule(0.01)),
        ("geom:theta0=0.1,ratio=0.5", GeometricSchedule(0.1, 0.5)),
        ("power:theta0=0.05,p=1.0", PowerSchedule(0.05, 1.0)),
        ("geom: ratio=0.5, theta0=0.1", GeometricSchedule(0.1, 0.5)),
    ])
    def test_known_kinds(self, text, expected):
        assert parse_schedule_spec(text) == expected

    @given(st.floats(min_value=1e-6, max_value=0.5))
    def test_spec_reparses(self, theta):
        schedule = ConstantSchedule(theta)
        assert parse_schedule_spec(schedule.spec) == schedule

    @pytest.mark.parametrize("text", [
        "const",
        "spiral:theta=0.1",
        "const:angle=0.1",
        "const:theta=abc",
        "geom:theta0=0.1",
        "aeps:eps",
    ])
    def test_malformed(self, text):
        with pytest.raises(SpecParseError):
            parse_schedule_spec(text)

    def test_error_reports_column(self):
        with pytest.raises(SpecParseError) as info:
            parse_schedule_spec("geom:theta0=0.1,rate=0.5")
        assert info.value.details["position"] == len("geom:theta0=0.1,")
        assert info.value.exit_code == 2


class TestRanges:
    def test_angle_above_koch_angle(self):
        with pytest.raises(ScheduleError):
            parse_schedule_spec("const:theta=0.6")

    def test_koch_angle_is_inclusive(self):
        assert ConstantSchedule(math.pi / 6).limit_angle == pytest.approx(math.pi / 6)

    def test_ten_digit_koch_literal_is_clamped(self):
        schedule = parse_schedule_spec("const:theta=0.5235987756")
        assert schedule.theta == math.pi / 6
        assert parse_schedule_spec("geom:theta0=0.5235987756,ratio=0.5").theta0 == math.pi / 6

    def test_just_above_koch_angle(self):
        with pytest.raises(ScheduleError):
            parse_schedule_spec("const:theta=0.5236")

    def test_flat_construction_allowed(self):
        flat = ConstantSchedule(0.0)
        assert flat.sum_sq_converges
        assert flat.stretch_limit() == 1.0

    @pytest.mark.parametrize("factory", [
        lambda: GeometricSchedule(0.0, 0.5),
        lambda: GeometricSchedule(0.1, 1.0),
        lambda: PowerSchedule(0.1, 0.0),
        lambda: AEpsSchedule(0.0),
        lambda: AEpsSchedule(0.2),
    ])
    def test_rejected_parameters(self, factory):
        with pytest.raises(ScheduleError):
            factory()


class TestAnalytics:
    def test_aeps_angles(self):
        schedule = AEpsSchedule(0.01)
        assert schedule.theta_n(0) == pytest.approx(math.atan(0.04))
        assert schedule.theta_n(100) == pytest.approx(math.atan(0.04 / math.sqrt(1.16)))
        assert not schedule.sum_sq_converges
        assert schedule.stretch_limit() == math.inf

    def test_geometric_tail(self):
        schedule = GeometricSchedule(0.1, 0.5)
        assert schedule.tail_sum(0) == pytest.approx(0.2)
        assert schedule.tail_sum(3) == pytest.approx(0.1 * 0.125 / 0.5)
        direct = math.prod(1.0 / math.cos(0.1 * 0.5 ** n) for n in range(200))
        assert schedule.stretch_limit() == pytest.approx(direct, rel=1e-13)

    def test_power_series_classes(self):
        assert not PowerSchedule(0.05, 0.5).sum_sq_converges
        assert PowerSchedule(0.05, 0.75).sum_sq_converges
        assert not PowerSchedule(0.05, 0.75).sum_converges
        assert PowerSchedule(0.05, 2.0).tail_sum(0) == pytest.approx(0.05 * math.pi ** 2 / 6)

    def test_power_stretch_limit_uses_zeta_tail(self):
        schedule = PowerSchedule(0.05, 1.0)
        n = np.arange(2_000_000)
        direct = math.exp(math.fsum((-np.log(np.cos(0.05 / (n + 1.0)))).tolist()))
        # the tail beyond two million terms is below 2e-9
        assert schedule.stretch_limit() == pytest.approx(direct, rel=1e-8)

    def test_constant_stage_thetas(self):
        assert ConstantSchedule(0.2).stage_thetas(3).tolist() == [0.2] * 8


class TestTable:
    def make(self):
        return TableSchedule(
            entries={(0, 0): 0.4, (1, 0): 0.3},
            tails={(1, 1): ConstantSchedule(0.2), (2, 0): AEpsSchedule(0.01), (2, 1): GeometricSchedule(0.1, 0.5)}
        )

    def test_lookup(self):
        table = self.make()
        assert table.angle_at(0, 0) == 0.4
        assert table.angle_at(3, 7) == 0.2
        assert table.angle_at(4, 0) == pytest.approx(math.atan(0.04 / math.sqrt(1.0 + 16 * 2 * 1e-4)))
        assert table.angle_at(3, 3) == pytest.approx(0.05)

    def test_stage_thetas(self):
        row = self.make().stage_thetas(2)
        assert row[2:].tolist() == [0.2, 0.2]
        assert row[0] == pytest.approx(math.atan(0.04))
        assert row[1] == pytest.approx(0.1)

    def test_tail_structure(self):
        table = self.make()
        assert table.tail_coverage() == pytest.approx(1.0)
        assert [key for key, _ in table.outer_tails()] == [(1, 1), (2, 0), (2, 1)]
        assert table.limit_angle == pytest.approx(0.2)
        assert not table.sum_sq_converges

    def test_missing_angle(self):
        table = TableSchedule(entries={(0, 0): 0.3})
        with pytest.raises(ScheduleError):
            table.angle_at(1, 0)
        with pytest.raises(ScheduleError):
            table.stage_thetas(1)
        assert math.isnan(table.limit_angle)

    def test_child_above_parent(self):
        with pytest.raises(ScheduleError):
            TableSchedule(entries={(0, 0): 0.2, (1, 1): 0.3})

    def test_invalid_index(self):
        with pytest.raises(ScheduleError):
            TableSchedule(entries={(1, 2): 0.1})

    def test_load(self, tmp_path):
        path = write_table(tmp_path, {
            "entries": [{"n": 0, "i": 0, "theta": 0.3}],
            "tails": [{"n": 1, "i": 0, "schedule": "const:theta=0.2"}, {"n": 1, "i": 1, "schedule": "geom:theta0=0.2,ratio=0.5"}]
        })
        table = parse_schedule_spec(f"table:{path}")
        assert isinstance(table, TableSchedule)
        assert table.angle_at(2, 3) == pytest.approx(0.1)

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(InputFileError):
            load_table_schedule(str(tmp_path / "absent.json"))

    def test_load_malformed(self, tmp_path):
        path = write_table(tmp_path, {"entries": [{"n": -1, "i": 0, "theta": 0.1}]})
        with pytest.raises(SpecParseError):
            load_table_schedule(path)
