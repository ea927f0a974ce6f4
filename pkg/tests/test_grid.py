import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from floodcoarse.grid import (DimensionError, ElevationMap, FlowState, RasterFormatError, avg_pool,
                              max_pool, read_raster, read_raw, write_pgm, write_raster, write_raw)

finite = st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False)


def test_avg_and_max_pool_block():
    a = np.array([[1.0, 2.0], [3.0, 6.0]])
    assert avg_pool(a, 2)[0, 0] == 3.0
    assert max_pool(a, 2)[0, 0] == 6.0


def test_pool_factor_16_shape_and_cell_size():
    z = ElevationMap(np.zeros((2000, 2000)), 1.0)
    c = avg_pool(z, 16)
    assert c.shape == (125, 125)
    assert c.cell_size == 16.0


def test_pool_rejects_non_divisible():
    with pytest.raises(DimensionError):
        avg_pool(np.zeros((10, 12)), 4)
    with pytest.raises(DimensionError):
        max_pool(np.zeros((8, 8)), 1)


@given(arrays(np.float64, (8, 12), elements=finite), finite)
def test_pooling_commutes_with_offset(z, c):
    np.testing.assert_allclose(avg_pool(z + c, 4), avg_pool(z, 4) + c, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(max_pool(z + c, 4), max_pool(z, 4) + c, rtol=1e-12, atol=1e-9)
    assert np.all(max_pool(z, 2) >= avg_pool(z, 2) - 1e-9)


@given(arrays(np.float64, (6, 6), elements=finite))
def test_avg_pool_preserves_mean(z):
    assert abs(avg_pool(z, 3).mean() - z.mean()) <= 1e-12 * max(1.0, np.abs(z).max())


def test_constant_map_stays_constant():
    z = np.full((8, 8), 3.25)
    assert np.all(avg_pool(z, 4) == 3.25)
    assert np.all(max_pool(z, 2) == 3.25)


def test_elevation_map_invariants():
    with pytest.raises(ValueError):
        ElevationMap(np.array([[1.0, np.nan], [0.0, 0.0]]), 1.0)
    with pytest.raises(ValueError):
        ElevationMap(np.zeros((1, 5)), 1.0)
    with pytest.raises(ValueError):
        ElevationMap(np.zeros((3, 3)), 0.0)
    src = np.zeros((3, 3))
    m = ElevationMap(src, 2.0)
    src[0, 0] = 5.0
    assert m.z[0, 0] == 0.0
    assert not m.z.flags.writeable


def test_flow_state_shapes():
    s = FlowState.dry((4, 5))
    assert s.qx.shape == (4, 4) and s.qy.shape == (3, 5)
    with pytest.raises(ValueError):
        FlowState(np.zeros((4, 5)), np.zeros((4, 5)), np.zeros((3, 5)))


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (4, 4), elements=finite))
def test_ascii_round_trip(tmp_path_factory, z):
    path = tmp_path_factory.mktemp("r") / "z.asc"
    write_raster(ElevationMap(z, 16.0), path)
    back = read_raster(path)
    assert back.cell_size == 16.0
    assert np.array_equal(back.z, z)


def test_cellsize_header_and_nodata(tmp_path):
    p = tmp_path / "a.asc"
    p.write_text("NCOLS 2\nNROWS 2\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 1.0\n1 2\n3 4\n")
    m = read_raster(p)
    assert m.cell_size == 1.0 and m.z[1, 0] == 3.0
    q = tmp_path / "b.asc"
    q.write_text("NCOLS 2\nNROWS 2\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 1.0\nNODATA_VALUE -9999\n1 -9999\n3 4\n")
    with pytest.raises(RasterFormatError):
        read_raster(q)


@pytest.mark.parametrize("text", [
    "NCOLS 2\nNROWS 2\nXLLCORNER 0\nYLLCORNER 0\n1 2\n3 4\n",                 # no CELLSIZE
    "NCOLS 2\nNROWS 2\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 1\n1 2\n3\n",       # short body
    "NCOLS 2\nNROWS 2\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 1\n1 nan\n3 4\n",   # non-finite
    "NCOLS 2\nNROWS 2\nXLLCORNER 0\nYLLCORNER 0\nDX 1\nDY 2\n1 2\n3 4\n",     # rectangular cells
])
def test_malformed_rasters(tmp_path, text):
    p = tmp_path / "bad.asc"
    p.write_text(text)
    with pytest.raises(RasterFormatError):
        read_raster(p)


def test_raw_round_trip_is_bitwise(tmp_path, rng):
    z = rng.normal(size=(5, 7))
    p = write_raw(z, 4.0, tmp_path / "z.bin")
    assert p.stat().st_size == 16 + 35 * 8
    back = read_raw(p)
    assert back.cell_size == 4.0 and np.array_equal(back.z, z)
    assert np.array_equal(read_raster(p).z, z)


def test_pgm_header(tmp_path):
    p = write_pgm(np.arange(6.0).reshape(2, 3), tmp_path / "a.pgm")
    data = p.read_bytes()
    assert data.startswith(b"P5\n3 2\n255\n")
    assert data[-6:] == bytes([0, 51, 102, 153, 204, 255])
