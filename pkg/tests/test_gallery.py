import math

import numpy as np
import pytest

from kochtype.exceptions import ConstructionError
from kochtype.services.gallery import canonical_name, gallery


class TestNames:
    @pytest.mark.parametrize("raw,expected", [
        ("N", "N"),
        ("Lambda_delta", "lambda-delta"),
        ("lambda-sq", "lambda-sq"),
        ("Gamma_eps", "gamma"),
        ("script-A_eps", "script-aeps"),
    ])
    def test_aliases(self, raw, expected):
        assert canonical_name(raw) == expected

    def test_unknown(self):
        with pytest.raises(ConstructionError):
            gallery("sierpinski")


class TestLineFamilies:
    def test_n_lines(self):
        sample = gallery("N", count=20000, box=(0.0, 0.0, 1.0, 1.1))
        ys = np.unique(sample.points[:, 1])
        assert ys.max() == pytest.approx(1.0)
        assert np.all(ys > 0)
        assert np.allclose(1.0 / ys, np.round(1.0 / ys))
        assert sample.weights.sum() == pytest.approx(len(ys), rel=1e-12)

    def test_n_lines_stop_at_line_gap(self):
        ys = np.unique(gallery("N", count=20000, box=(0.0, 0.0, 1.0, 1.1)).points[:, 1])
        last = int(round(1.0 / ys.min()))
        assert last == 1000
        assert 1.0 / last - 1.0 / (last + 1) <= 1e-6
        assert 1.0 / (last - 1) - 1.0 / last > 1e-6

    def test_lambda_sq_stops_at_line_gap(self):
        sample = gallery("lambda-sq", count=20000, box=(0.0, -1.0, 1.0, 1.0))
        at_one = sample.points[sample.points[:, 0] == 1.0, 1]
        last = int(round(1.0 / np.abs(at_one).min()))
        assert 1.0 / (last * (last + 1)) <= 1e-6 < 1.0 / ((last - 1) * last)

    def test_lambda_delta_needs_delta(self):
        with pytest.raises(ConstructionError):
            gallery("lambda-delta", box=(-1.0, -1.0, 1.0, 1.0))

    def test_lambda_delta_symmetric(self):
        sample = gallery("lambda-delta", {"delta": 0.5}, count=40000, box=(-1.0, -1.0, 1.0, 1.0))
        mirrored = {(round(x, 12), round(-y, 12)) for x, y in sample.points.tolist()}
        original = {(round(x, 12), round(y, 12)) for x, y in sample.points.tolist()}
        assert mirrored == original
        # every line passes through the origin
        assert [0.0, 0.0] in sample.points.tolist()

    def test_lambda_sq_weights_follow_arc_length(self):
        sample = gallery("lambda-sq", count=200000, box=(0.0, -1.0, 1.0, 1.0))
        x, y = sample.points[:, 0], sample.points[:, 1]
        first = (x > 0) & np.isclose(y, x ** 2, rtol=1e-12, atol=0.0)
        # x = 0 is shared by every line, so its half cell is left out
        arc = 0.5 * math.sqrt(5.0) + 0.25 * math.asinh(2.0)
        assert sample.weights[first].sum() == pytest.approx(arc - sample.resolution / 2.0, abs=1e-3)

    def test_needs_box(self):
        with pytest.raises(ConstructionError):
            gallery("N")

    def test_empty_box(self):
        with pytest.raises(ConstructionError):
            gallery("N", box=(0.0, 2.0, 1.0, 3.0))

    def test_inverted_box(self):
        with pytest.raises(ConstructionError):
            gallery("N", box=(1.0, 0.0, 0.0, 1.0))


class TestTreeSets:
    def test_gamma(self):
        sample = gallery("gamma", {"eps": 0.1, "depth": 8}, count=128)
        assert sample.points.shape == (128, 2)
        assert sample.box is None
        length = (1.0 / math.cos(math.atan(0.2))) ** 8
        assert sample.weights.sum() == pytest.approx(length, rel=1e-10)

    def test_script_aeps_removes_edge_balls(self):
        full = gallery("aeps", {"eps": 0.01, "depth": 10}, count=1024)
        holed = gallery("script-aeps", {"eps": 0.01, "depth": 10}, count=1024)
        assert len(holed.points) < len(full.points)

    def test_needs_eps(self):
        with pytest.raises(ConstructionError):
            gallery("gamma", {"depth": 4})

    def test_count_positive(self):
        with pytest.raises(ConstructionError):
            gallery("aeps", {"eps": 0.01}, count=0)
