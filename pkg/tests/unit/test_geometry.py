"""Tests fuer geometry.py: Fenster, Muster, Gitter und Musterdateien."""

import numpy as np
import pytest

from coxfield.errors import ConfigurationError, DataError
from coxfield.geometry import PointPattern, Window, bin_points, discretize, read_pattern, write_pattern

from .conftest import write_csv


class TestWindow:
    def test_area_and_extent(self):
        w = Window(0, 40, 0, 40)
        assert w.area == 1600.0
        assert w.width == w.height == 40.0

    def test_degenerate_rejected(self):
        with pytest.raises(ConfigurationError):
            Window(5, 5, 0, 1)

    def test_from_sequence_needs_four_values(self):
        with pytest.raises(ConfigurationError):
            Window.from_sequence([0, 1, 2])

    def test_boundary_distance(self):
        w = Window(0, 10, 0, 10)
        d = w.boundary_distance(np.array([[5, 5], [1, 9], [10, 3]]))
        assert d.tolist() == [5.0, 1.0, 0.0]

    def test_strictly_contains(self):
        assert Window(-20, 60, -20, 60).strictly_contains(Window(0, 40, 0, 40))
        assert not Window(0, 60, -20, 60).strictly_contains(Window(0, 40, 0, 40))


class TestPointPattern:
    def test_point_outside_window_reports_index(self):
        with pytest.raises(DataError) as exc:
            PointPattern(np.array([[1, 1], [11, 2]]), Window(0, 10, 0, 10))
        assert exc.value.index == 1

    def test_marks_must_be_positive(self):
        with pytest.raises(DataError):
            PointPattern(np.array([[1, 1]]), Window(0, 10, 0, 10), np.array([0.0]))

    def test_mark_count_must_match(self):
        with pytest.raises(DataError):
            PointPattern(np.array([[1, 1], [2, 2]]), Window(0, 10, 0, 10), np.array([1.0]))

    def test_points_are_read_only(self, parents10):
        with pytest.raises(ValueError):
            parents10.points[0, 0] = 3.0

    def test_restricted_keeps_marks(self, window10):
        big = PointPattern(np.array([[-5, 1], [3, 3], [12, 4]]), Window(-10, 20, -10, 20), np.array([1., 2., 3.]))
        inner = big.restricted(window10)
        assert len(inner) == 1
        assert inner.marks.tolist() == [2.0]
        assert inner.window == window10

    def test_empty(self, window10):
        assert len(PointPattern.empty(window10)) == 0


class TestDiscretize:
    def test_cell_counts(self, window40):
        grid = discretize(window40, 1.0)
        assert (grid.n_x, grid.n_y, grid.G) == (40, 40, 1600)

    def test_non_divisible_window(self, window10):
        with pytest.raises(ConfigurationError, match="not an integer multiple"):
            discretize(window10, 0.3)

    def test_fractional_cell_size(self, window10):
        grid = discretize(window10, 0.1)
        assert grid.G == 10000

    def test_row_major_centres(self, grid10):
        c = grid10.centers
        assert c[0].tolist() == [0.5, 0.5]
        assert c[1].tolist() == [1.5, 0.5]
        assert c[grid10.n_x].tolist() == [0.5, 1.5]

    def test_cell_bounds(self, grid10):
        assert grid10.cell_bounds(11) == (1.0, 2.0, 1.0, 2.0)


class TestBinPoints:
    def test_counts_sum_to_points(self, grid10, rng, window10):
        pts = rng.uniform(0, 10, size=(250, 2))
        counts = bin_points(PointPattern(pts, window10), grid10)
        assert counts.total == 250

    def test_interior_boundary_goes_to_upper_cell(self, grid10, window10):
        counts = bin_points(PointPattern(np.array([[1.0, 0.5]]), window10), grid10)
        assert counts.counts[1] == 1

    def test_outer_boundary_is_clamped(self, grid10, window10):
        counts = bin_points(PointPattern(np.array([[10.0, 10.0]]), window10), grid10)
        assert counts.counts[grid10.G - 1] == 1

    def test_point_outside_grid(self, grid10):
        p = PointPattern(np.array([[1, 1], [15, 1]]), Window(0, 20, 0, 20))
        with pytest.raises(DataError) as exc:
            bin_points(p, grid10)
        assert exc.value.index == 1

    def test_empty_pattern(self, grid10, window10):
        assert bin_points(PointPattern.empty(window10), grid10).total == 0


class TestPatternFiles:
    def test_read_marked(self, tmp_path, window10):
        f = write_csv(tmp_path / "p.csv", ["x", "y", "mark"], [[1, 2, 0.5], [3, 4, 2]])
        p = read_pattern(f, window10)
        assert p.is_marked
        assert p.marks.tolist() == [0.5, 2.0]

    def test_malformed_row_reports_line(self, tmp_path, window10):
        f = tmp_path / "p.csv"
        f.write_text("# plot: 1\nx,y\n1,2\n3\n", encoding="utf-8")
        with pytest.raises(DataError) as exc:
            read_pattern(f, window10)
        assert exc.value.line == 4

    def test_outside_point_reports_line(self, tmp_path, window10):
        f = write_csv(tmp_path / "p.csv", ["x", "y"], [[1, 2], [3, 40]])
        with pytest.raises(DataError) as exc:
            read_pattern(f, window10)
        assert exc.value.line == 3

    def test_bad_header(self, tmp_path, window10):
        f = write_csv(tmp_path / "p.csv", ["a", "b"], [[1, 2]])
        with pytest.raises(DataError, match="header"):
            read_pattern(f, window10)

    def test_written_file_is_exact(self, tmp_path, marked_parents10, window10):
        path = write_pattern(marked_parents10, tmp_path / "out.csv", {"plot": "A"})
        back = read_pattern(path, window10)
        np.testing.assert_array_equal(back.points, marked_parents10.points)
        np.testing.assert_array_equal(back.marks, marked_parents10.marks)
        assert path.read_text(encoding="utf-8").startswith("# plot: A\n")
