import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lego.errors import DimensionError, FormatError
from lego.imagecore import (
    build_dct_basis, decode, encode, load_pgm, load_tensor, project, save_pgm, save_tensor,
    zigzag_order,
)


def test_dc_basis_is_constant():
    b = build_dct_basis(8, 8, 1)
    assert b.rows.shape == (1, 64)
    np.testing.assert_allclose(b.rows[0], 1 / 8, atol=1e-15)


@pytest.mark.parametrize("h,w,d", [(32, 32, 48), (8, 8, 64), (16, 8, 30), (32, 32, 1024)])
def test_gram_is_identity(h, w, d):
    b = build_dct_basis(h, w, d)
    np.testing.assert_allclose(b.rows @ b.rows.T, np.eye(d), atol=1e-6)


def test_dimension_overflow():
    with pytest.raises(DimensionError):
        build_dct_basis(8, 8, 65)


def test_zigzag_starts_like_jpeg():
    assert zigzag_order(8, 8)[:6] == [(0, 0), (0, 1), (1, 0), (2, 0), (1, 1), (0, 2)]
    assert sorted(zigzag_order(4, 6)) == [(u, v) for u in range(4) for v in range(6)]


def test_full_basis_round_trip(rng):
    b = build_dct_basis(32, 32, 1024)
    imgs = rng.random((5, 32, 32))
    assert np.max(np.abs(decode(encode(imgs, b), b) - imgs)) < 1e-5


def test_encode_matches_naive_dot_products(rng, basis32):
    img = rng.random((32, 32))
    expected = [sum(basis32.rows[k][p] * img.ravel()[p] for p in range(1024)) for k in range(basis32.d)]
    np.testing.assert_allclose(encode(img, basis32), expected, atol=1e-12)


def test_zero_maps_to_zero(basis32):
    assert not encode(np.zeros((32, 32)), basis32).any()
    assert not decode(np.zeros(48), basis32).any()


def test_unit_dc_decodes_to_constant():
    b = build_dct_basis(8, 8, 3)
    np.testing.assert_allclose(decode(np.array([1.0, 0, 0]), b), np.full((8, 8), 1 / 8), atol=1e-15)


def test_encode_decode_identity_on_latents(rng, basis32):
    z = rng.standard_normal((100, 48)) * 3
    assert np.max(np.abs(encode(decode(z, basis32), basis32) - z)) < 1e-6


def test_projection_residual_orthogonal(rng, basis32):
    img = rng.random((32, 32))
    resid = img - project(img, basis32)
    assert np.max(np.abs(basis32.rows @ resid.ravel())) < 1e-5


def test_dimension_mismatch(basis32):
    with pytest.raises(DimensionError):
        encode(np.zeros((16, 16)), basis32)
    with pytest.raises(DimensionError):
        decode(np.zeros(47), basis32)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=4), st.integers(0, 2**32 - 1))
def test_tensor_round_trip_bitwise(tmp_path_factory, dims, seed):
    data = np.random.default_rng(seed).standard_normal(int(np.prod(dims))).astype("<f4")
    path = tmp_path_factory.mktemp("t") / "x.lgt"
    save_tensor(path, dims, data)
    got_dims, got = load_tensor(path)
    assert got_dims == dims
    assert got.tobytes() == data.tobytes()


def test_tensor_layout(tmp_path):
    save_tensor(tmp_path / "a.lgt", [2, 1], [1.0, -2.0])
    raw = (tmp_path / "a.lgt").read_bytes()
    assert raw == b"LGT1" + (2).to_bytes(4, "little") + (2).to_bytes(4, "little") \
        + (1).to_bytes(4, "little") + np.array([1.0, -2.0], "<f4").tobytes()


def test_tensor_bad_magic(tmp_path):
    p = tmp_path / "bad.lgt"
    p.write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(FormatError):
        load_tensor(p)


def test_tensor_length_mismatch(tmp_path):
    with pytest.raises(DimensionError):
        save_tensor(tmp_path / "x.lgt", [2, 3], np.zeros(5))
    p = tmp_path / "short.lgt"
    save_tensor(p, [2, 3], np.zeros(6))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(FormatError):
        load_tensor(p)


@pytest.mark.parametrize("binary", [True, False])
def test_pgm_export_clamps_and_rounds(tmp_path, binary):
    img = np.full((8, 8), 0.5)
    img[0, 0] = -1.0
    img[0, 1] = 2.0
    img[0, 2] = 0.5 / 255  # exactly half a level: rounds away from zero
    save_pgm(tmp_path / "x.pgm", img, binary=binary)
    back = np.rint(load_pgm(tmp_path / "x.pgm") * 255).astype(int)
    assert back[0, 0] == 0 and back[0, 1] == 255 and back[0, 2] == 1
    assert back[1, 1] == 128
