import numpy as np
import pytest

from hessvar import grids, gridio


@pytest.fixture
def sample_grid():
    rng = np.random.default_rng(20)
    g = grids.make_grid(2, 13, 1.0)
    # awkward values: denormals-ish, negative zero, huge magnitudes
    vals = rng.standard_normal(g.extents) * np.exp(rng.uniform(-30, 30, g.extents))
    vals[0, 0] = -0.0
    return g.with_values(vals)


def test_csv_roundtrip_scalar_bit_exact(sample_grid, tmp_path):
    path = tmp_path / "grid.csv"
    gridio.write_csv(path, sample_grid)
    back = gridio.read_csv(path)
    assert back.h == sample_grid.h
    assert back.boundary_width == sample_grid.boundary_width
    assert np.array_equal(back.values, sample_grid.values)


def test_binary_roundtrip_scalar_bit_exact(sample_grid, tmp_path):
    path = tmp_path / "grid.hvgf"
    gridio.write_binary(path, sample_grid)
    back = gridio.read_binary(path)
    assert back.h == sample_grid.h
    assert np.array_equal(
        back.values.view(np.uint64), sample_grid.values.view(np.uint64)
    )


def test_roundtrip_symmat_field(tmp_path):
    rng = np.random.default_rng(21)
    g = grids.make_grid(3, 11, 1.0)
    u = g.with_values(rng.standard_normal(g.extents))
    field = grids.hessian_field(u)
    for writer, path in ((gridio.write_csv, tmp_path / "f.csv"),
                         (gridio.write_binary, tmp_path / "f.hvgf")):
        writer(path, field)
        back = gridio.read_field(path)
        assert back.dim == 3
        assert np.array_equal(back.valid, field.valid)
        assert np.array_equal(back.values[back.valid], field.values[field.valid])


def test_binary_mask_payload(tmp_path):
    rng = np.random.default_rng(22)
    mask = rng.random((9, 9)) > 0.5
    path = tmp_path / "mask.hvgf"
    gridio.write_binary(path, (mask, 0.125))
    back_mask, h = gridio.read_binary(path)
    assert h == 0.125
    assert np.array_equal(back_mask.astype(bool), mask)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.hvgf"
    path.write_bytes(b"NOPE" + bytes(64))
    with pytest.raises(gridio.FormatError):
        gridio.read_binary(path)


def test_truncated_csv_rejected(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text("dim,n_axes,h,boundary_width\n2,13,0.125,2\ni,j,value\n0,0,1.0\n")
    with pytest.raises(gridio.FormatError):
        gridio.read_csv(path)
