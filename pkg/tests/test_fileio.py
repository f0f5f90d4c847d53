import numpy as np
import pytest

from locomanip.fileio import (
    load_depth_csv,
    load_depth_pgm,
    load_offset_csv,
    load_waypoints_csv,
    save_depth_csv,
    save_depth_pgm,
    save_grid_pgm,
    save_offset_csv,
    save_waypoints_csv,
)
from locomanip.geometry import DepthImage, OccupancyGrid, Pose2D


def test_depth_csv_roundtrip(tmp_path, rng):
    depth = DepthImage(rng.uniform(0.0, 5.0, (12, 17)))
    path = tmp_path / "d.csv"
    save_depth_csv(depth, path)
    back = load_depth_csv(path)
    np.testing.assert_array_equal(back.values, depth.values)


def test_depth_pgm_roundtrip_millimeter_scale(tmp_path):
    vals = np.array([[0.0, 1.234], [2.5, 0.001]])
    path = tmp_path / "d.pgm"
    save_depth_pgm(DepthImage(vals), path, scale_mm=1.0)
    back = load_depth_pgm(path)
    assert back.values[0, 0] == 0.0  # invalid stays invalid
    np.testing.assert_allclose(back.values, vals, atol=5e-4)


def test_depth_pgm_coarser_scale(tmp_path):
    vals = np.full((3, 3), 12.5)
    path = tmp_path / "far.pgm"
    save_depth_pgm(DepthImage(vals), path, scale_mm=2.0)
    back = load_depth_pgm(path)
    np.testing.assert_allclose(back.values, vals, atol=1e-3)
    assert b"depth-scale-mm" in path.read_bytes()[:80]


def test_depth_pgm_rejects_bad_scale(tmp_path):
    with pytest.raises(ValueError):
        save_depth_pgm(DepthImage(np.ones((2, 2))), tmp_path / "x.pgm", 0.0)


def test_grid_pgm_export(tmp_path):
    grid = OccupancyGrid.empty(0.05, Pose2D(0, 0), cols=4, rows=3)
    grid.cells[1, 2] = True
    path = tmp_path / "g.pgm"
    save_grid_pgm(grid, path)
    data = path.read_bytes()
    header, pixels = data.split(b"255\n", 1)
    assert header.startswith(b"P5")
    img = np.frombuffer(pixels, dtype=np.uint8).reshape(3, 4)
    assert img[2, 1] == 255
    assert img.sum() == 255  # exactly one occupied cell


def test_waypoints_csv_roundtrip(tmp_path):
    wps = [(0.0, 0.0), (1.25, -0.5), (2.0, 3.0)]
    path = tmp_path / "w.csv"
    save_waypoints_csv(wps, path)
    assert path.read_text().splitlines()[0] == "x,y"
    assert load_waypoints_csv(path) == wps


def test_offset_csv_roundtrip(tmp_path):
    rows = [(0.4, 0.1, 0.6), (0.6, 0.12, 0.62)]
    path = tmp_path / "offsets.csv"
    save_offset_csv(rows, path)
    assert path.read_text().splitlines()[0] == "z,dx,dz"
    assert load_offset_csv(path) == rows
