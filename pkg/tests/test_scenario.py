import numpy as np
import pytest
import yaml

from floodcoarse.grid import ElevationMap
from floodcoarse.scenario import (KINDS, TerrainSpec, auto_bc, bc_grid, bcs_from_config, centered_segment,
                                  generate, load_config, spec_to_dict, terrain_from_config)
from floodcoarse.solver import BoundaryConditions, Segment


def test_sloped_plane_example():
    z = generate(TerrainSpec("SlopedPlane", 64, 64, 16.0, slope=0.001))
    j = np.arange(64)[None, :]
    np.testing.assert_allclose(z.z, np.broadcast_to(0.001 * 16 * j, (64, 64)), rtol=0, atol=1e-15)
    assert z.z.max() == pytest.approx(1.008)


@pytest.mark.parametrize("kind", KINDS)
def test_every_kind_is_deterministic(kind):
    spec = TerrainSpec(kind, 32, 48, noise=0.3, seed=4)
    a, b = generate(spec), generate(spec)
    assert a.shape == (32, 48) and np.array_equal(a.z, b.z)
    assert not np.array_equal(a.z, generate(spec.with_(seed=5)).z)


def test_zero_noise_ignores_seed():
    spec = TerrainSpec("Valley", 16, 16)
    assert np.array_equal(generate(spec).z, generate(spec.with_(seed=9)).z)


def test_notch_differs_from_ridge_only_in_notch():
    spec = TerrainSpec("EmbankmentRidge", 32, 32, noise=0.2, seed=1, ridge_row=12, notch_col=10)
    ridge = generate(spec).z
    notched_spec = spec.with_(kind="NotchedEmbankment")
    notched = generate(notched_spec).z
    rs, cs = notched_spec.notch_cells()
    mask = np.zeros_like(ridge, dtype=bool)
    mask[rs, cs] = True
    assert np.array_equal(ridge[~mask], notched[~mask])
    np.testing.assert_allclose(ridge[mask] - notched[mask], spec.ridge_height)


def test_zero_noise_mirror_symmetric_spec():
    spec = TerrainSpec("CanalWithLevees", 32, 32, slope=0.0, slope_y=0.001)
    z = generate(spec).z
    assert np.array_equal(z, z[:, ::-1])


def test_bands_checked():
    with pytest.raises(ValueError):
        generate(TerrainSpec("EmbankmentRidge", 16, 16, ridge_row=15, ridge_width=2))
    with pytest.raises(ValueError):
        generate(TerrainSpec("NotchedEmbankment", 16, 16, notch_col=15))
    with pytest.raises(ValueError):
        TerrainSpec("Crater")


def test_auto_bc_east_sloping_plane():
    z = generate(TerrainSpec("SlopedPlane", 64, 64, 16.0, slope=-0.001, slope_y=0.0001))
    bc = auto_bc(z)
    assert bc.outflux.edge == "E" and bc.influx.edge == "W"
    assert bc.outflux.width_cells == 25 and bc.influx.width_cells == 25
    # minimum at the NE corner, segment clamped into the edge
    assert bc.outflux.start_cell == 0
    assert bc.influx.start_cell == 32 - 12


def test_auto_bc_tie_goes_to_nw_corner():
    z = ElevationMap(np.zeros((40, 40)), 16.0)
    bc = auto_bc(z)
    assert bc.outflux == Segment("N", 0, 25)
    assert bc.influx.edge == "S"
    with pytest.raises(ValueError):
        auto_bc(z, width_m=8.0)


def test_centered_segment_clamps():
    assert centered_segment("N", 0, 5, 10) == Segment("N", 0, 5)
    assert centered_segment("N", 9, 5, 10) == Segment("N", 5, 5)
    assert centered_segment("N", 5, 50, 10) == Segment("N", 0, 10)


def test_bc_grid_counts_and_edges():
    z = ElevationMap(np.zeros((128, 128)), 16.0)
    assert len(bc_grid(z, 32, [100, 200, 400])) == 96
    four = bc_grid(z, 4, [100])
    assert [b.influx.edge for b in four] == ["N", "E", "S", "W"]
    for b in four:
        assert abs(b.influx.start_cell + b.influx.width_cells / 2 - 64) <= 1
        b.validate(z.shape)
    with pytest.raises(ValueError):
        bc_grid(z, 0, [1])


def test_config_roundtrip(tmp_path):
    spec = TerrainSpec("RiverChannel", 32, 32, noise=0.1, seed=2)
    cfg = {"terrain": spec_to_dict(spec), "bc_grid": {"n_locations": 2, "discharges": [50, 100]}}
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(cfg))
    loaded = load_config(p)
    assert terrain_from_config(loaded) == spec
    z = generate(spec)
    assert len(bcs_from_config(loaded, z)) == 4
    explicit = {"bcs": [BoundaryConditions(Segment("W", 1, 2), 3.0, Segment("E", 1, 2), 1e-3).to_dict()]}
    assert bcs_from_config(explicit, z)[0].discharge == 3.0
    assert bcs_from_config({}, z)[0] == auto_bc(z)
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ValueError):
        load_config(p)
