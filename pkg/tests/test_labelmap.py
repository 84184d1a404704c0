import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from smartbatch import ConfigError, DataError, LabelMap, decode_labelmap, downscale_nearest, scan_corpus
from smartbatch.labelmap import decode_text_grid, encode_text_grid, write_labelmap


def test_header_is_width_then_height(tmp_path):
    p = tmp_path / "toy.lgm"
    p.write_text("2 4\n0 0 1 0\n1 1 1 0")
    with pytest.raises(DataError, match="ragged"):
        decode_labelmap(p)


def test_text_grid_width_height(tmp_path):
    p = tmp_path / "toy.lgm"
    p.write_text("4 2\n0 0 1 0\n1 1 1 0\n")
    m = decode_labelmap(p)
    assert (m.id, m.width, m.height) == ("toy", 4, 2)
    np.testing.assert_array_equal(m.data, [[0, 0, 1, 0], [1, 1, 1, 0]])


def test_single_pixel_png(tmp_path):
    p = tmp_path / "one.png"
    Image.fromarray(np.array([[5]], dtype=np.uint8), mode="L").save(p)
    m = decode_labelmap(p)
    assert (m.width, m.height, m.data.ravel().tolist()) == (1, 1, [5])


def test_png_round_trip(tmp_path, rng):
    data = rng.integers(0, 256, size=(7, 11)).astype(np.uint8)
    p = write_labelmap(LabelMap("x", data), tmp_path / "x.png")
    np.testing.assert_array_equal(decode_labelmap(p).data, data)


def test_palette_png_keeps_indices(tmp_path):
    img = Image.fromarray(np.array([[0, 3], [7, 255]], dtype=np.uint8), mode="L").convert("P")
    img.putpalette([v for i in range(256) for v in (i, 0, 0)])
    img.save(tmp_path / "p.png")
    np.testing.assert_array_equal(decode_labelmap(tmp_path / "p.png").data, [[0, 3], [7, 255]])


def test_rgb_rejected(tmp_path):
    Image.new("RGB", (3, 2)).save(tmp_path / "rgb.png")
    with pytest.raises(DataError, match="expected single-channel label map"):
        decode_labelmap(tmp_path / "rgb.png")


def test_16_bit_rejected(tmp_path):
    Image.fromarray(np.full((2, 2), 300, dtype=np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(DataError, match="8-bit"):
        decode_labelmap(tmp_path / "deep.png")


@pytest.mark.parametrize("text, message", [
    ("3 2\n0 0 0\n0 0\n", "ragged"),
    ("2 2\n0 0\n", "ragged"),
    ("0 2\n\n\n", "zero-area"),
    ("2 1\n0 300\n", "0..255"),
    ("2 1\n0 x\n", "non-integer"),
    ("", "empty"),
])
def test_text_grid_errors(text, message):
    with pytest.raises(DataError, match=message):
        decode_text_grid(text, "t")


def test_unreadable_file(tmp_path):
    with pytest.raises(DataError, match="unreadable"):
        decode_labelmap(tmp_path / "missing.png")
    (tmp_path / "junk.png").write_bytes(b"not a png")
    with pytest.raises(DataError, match="unreadable"):
        decode_labelmap(tmp_path / "junk.png")


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6))))
def test_text_grid_round_trip(data):
    m = LabelMap("m", data)
    assert decode_text_grid(encode_text_grid(m), "m") == m


def test_scan_sorted(tmp_path):
    for name in ("b.png", "a.png", "notes.txt"):
        (tmp_path / name).write_bytes(b"")
    listing = scan_corpus(tmp_path)
    assert listing.ids == ["a", "b"]
    assert scan_corpus(tmp_path).entries == listing.entries


def test_scan_empty(tmp_path):
    assert len(scan_corpus(tmp_path)) == 0


def test_scan_duplicate_stem(tmp_path):
    (tmp_path / "a.png").write_bytes(b"")
    (tmp_path / "a.lgm").write_bytes(b"")
    with pytest.raises(DataError, match="duplicate id a"):
        scan_corpus(tmp_path)


def test_scan_pattern_and_missing_dir(tmp_path):
    (tmp_path / "a.png").write_bytes(b"")
    (tmp_path / "b.lgm").write_bytes(b"")
    assert scan_corpus(tmp_path, "*.lgm").ids == ["b"]
    with pytest.raises(DataError, match="unreadable directory"):
        scan_corpus(tmp_path / "nope")


def test_downscale_identity():
    m = LabelMap("m", np.arange(8).reshape(2, 4))
    assert downscale_nearest(m, 1) == m


def test_downscale_4x2_by_2():
    m = LabelMap("m", np.arange(8).reshape(2, 4))
    out = downscale_nearest(m, 2)
    assert (out.width, out.height) == (2, 1)
    np.testing.assert_array_equal(out.data, [[m.data[0, 0], m.data[0, 2]]])


def test_downscale_5x5_by_2():
    m = LabelMap("m", np.arange(25).reshape(5, 5))
    out = downscale_nearest(m, 2)
    np.testing.assert_array_equal(out.data, m.data[np.ix_([0, 2, 4], [0, 2, 4])])


def test_downscale_zero_factor():
    with pytest.raises(ConfigError):
        downscale_nearest(LabelMap("m", np.zeros((2, 2))), 0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.integers(0, 5)),
       st.integers(1, 4))
def test_downscale_introduces_no_new_ids(data, factor):
    out = downscale_nearest(LabelMap("m", data), factor)
    assert set(np.unique(out.data)) <= set(np.unique(data))
    assert out.data.shape == (-(-data.shape[0] // factor), -(-data.shape[1] // factor))
