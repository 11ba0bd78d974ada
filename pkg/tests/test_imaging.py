import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from filmfuse import imaging
from filmfuse.errors import ContractError, FormatError

from oracles import sobel_loop


def write_pgm(path, arr, maxval=255):
    arr = np.asarray(arr)
    magic = b"P5" if arr.ndim == 2 else b"P6"
    dtype = ">u2" if maxval == 65535 else "u1"
    header = b"%s\n# comment\n%d %d\n%d\n" % (magic, arr.shape[1], arr.shape[0], maxval)
    path.write_bytes(header + arr.astype(dtype).tobytes())


def test_pgm_all_white_loads_as_ones(tmp_path):
    p = tmp_path / "w.pgm"
    write_pgm(p, np.full((4, 5), 255))
    img = imaging.load_image(p)
    assert img.shape == (4, 5)
    assert np.all(img == 1.0)


def test_value_128_scales_by_255(tmp_path):
    p = tmp_path / "g.pgm"
    write_pgm(p, np.full((2, 2), 128))
    assert imaging.load_image(p)[0, 0] == pytest.approx(128 / 255, abs=1e-12)


def test_16bit_ppm(tmp_path):
    p = tmp_path / "c.ppm"
    raw = np.array([[[65535, 0, 32768]]])
    write_pgm(p, raw, maxval=65535)
    img = imaging.load_image(p)
    assert img.shape == (1, 1, 3)
    np.testing.assert_allclose(img[0, 0], [1.0, 0.0, 32768 / 65535])


def test_truncated_png_is_format_error(tmp_path):
    p = tmp_path / "a.png"
    imaging.save_image(p, np.random.default_rng(0).random((32, 32, 3)))
    data = p.read_bytes()
    p.write_bytes(data[: len(data) // 2])
    with pytest.raises(FormatError):
        imaging.load_image(p)


def test_missing_and_unknown_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        imaging.load_image(tmp_path / "nope.png")
    bad = tmp_path / "x.png"
    bad.write_bytes(b"GIF89a....")
    with pytest.raises(FormatError):
        imaging.load_image(bad)


def test_png_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    for shape in ((17, 9), (8, 12, 3)):
        q = rng.integers(0, 256, size=shape).astype(np.uint8)
        p1 = tmp_path / "a.png"
        p2 = tmp_path / "b.png"
        imaging.save_image(p1, q / 255.0)
        first = imaging.load_image(p1)
        imaging.save_image(p2, first)
        second = imaging.load_image(p2)
        assert np.array_equal(imaging.quantize8(first), q)
        assert np.array_equal(first, second)


def test_16bit_png(tmp_path):
    import cv2

    a = np.array([[0, 1000], [65535, 30000]], dtype=np.uint16)
    p = tmp_path / "d.png"
    cv2.imwrite(str(p), a)
    np.testing.assert_allclose(imaging.load_image(p), a / 65535.0)


def test_quantize_half_to_even():
    vals = np.array([0.5, 1.5, 2.5]) / 255.0
    assert imaging.quantize8(vals).tolist() == [0, 2, 2]


def test_luma_gray_axis():
    img = np.full((2, 2, 3), 0.3)
    y, (cb, cr) = imaging.to_luma_chroma(img)
    np.testing.assert_allclose(y, 0.3, atol=1e-15)
    np.testing.assert_allclose(cb, 0.5, atol=1e-15)
    np.testing.assert_allclose(cr, 0.5, atol=1e-15)


def test_luma_single_channel_identity():
    img = np.random.default_rng(2).random((5, 6))
    y, chroma = imaging.to_luma_chroma(img)
    assert chroma is None
    assert np.array_equal(y, img)


def test_pure_red_luma():
    img = np.zeros((1, 1, 3))
    img[0, 0, 0] = 1.0
    y, (cb, cr) = imaging.to_luma_chroma(img)
    # by hand: Y = 0.299*1 + 0.587*0 + 0.114*0
    assert y[0, 0] == pytest.approx(0.299, abs=1e-15)
    assert cr[0, 0] == pytest.approx(0.5 + 0.701 / 1.402, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 5, 3), elements=st.floats(0.0, 1.0)))
def test_luma_chroma_round_trip(img):
    y, chroma = imaging.to_luma_chroma(img)
    back = imaging.recompose(y, "first", [chroma])
    np.testing.assert_allclose(back, img, atol=1e-6)


def test_recompose_without_chroma_passes_luma():
    y = np.random.default_rng(3).random((4, 4))
    out = imaging.recompose(y, "saturation", [None, None])
    assert np.array_equal(out, y)


def test_recompose_identical_chroma_reused():
    rng = np.random.default_rng(4)
    cb, cr = rng.random((3, 3)), rng.random((3, 3))
    fused = imaging.fuse_chroma([(cb, cr), (cb, cr)], "saturation")
    np.testing.assert_allclose(fused[0], cb, rtol=0, atol=1e-15)
    np.testing.assert_allclose(fused[1], cr, rtol=0, atol=1e-15)


def test_saturation_weighting_hand_case():
    cb1 = np.array([[0.5, 0.7], [0.5, 0.2]])
    cr1 = np.array([[0.5, 0.5], [0.6, 0.5]])
    cb2 = np.array([[0.5, 0.4], [0.9, 0.5]])
    cr2 = np.array([[0.5, 0.5], [0.5, 0.5]])
    cb, cr = imaging.fuse_chroma([(cb1, cr1), (cb2, cr2)], "saturation")
    # (0,0): both neutral -> 0.5
    # (0,1): w1=0.2, w2=0.1 -> cb=(0.2*0.7+0.1*0.4)/0.3=0.6, cr=0.5
    # (1,0): w1=0.1, w2=0.4 -> cb=(0.1*0.5+0.4*0.9)/0.5=0.82, cr=(0.1*0.6+0.4*0.5)/0.5=0.52
    # (1,1): w1=0.3, w2=0 -> cb=0.2, cr=0.5
    np.testing.assert_allclose(cb, [[0.5, 0.6], [0.82, 0.2]], atol=1e-12)
    np.testing.assert_allclose(cr, [[0.5, 0.5], [0.52, 0.5]], atol=1e-12)


def test_recompose_chroma_shape_mismatch():
    with pytest.raises(ContractError):
        imaging.recompose(np.zeros((4, 4)), "saturation", [(np.zeros((3, 4)), np.zeros((3, 4)))])


def test_sobel_constant_is_zero():
    g = imaging.sobel(np.full((6, 7), 0.4))
    assert np.all(g.magnitude == 0.0)


def test_sobel_step_edge():
    img = np.zeros((6, 6))
    img[:, 3:] = 1.0
    g = imaging.sobel(img)
    assert np.all(g.gy == 0.0)
    col = np.abs(g.gx).max(axis=0)
    assert np.all(np.abs(g.gx)[:, 2:4] == np.abs(g.gx).max())
    assert col[0] == 0.0 and col[-1] == 0.0


def test_sobel_ramp_by_hand():
    img = np.tile(np.arange(4) / 3.0, (4, 1))
    g = imaging.sobel(img)
    # interior: (1 + 2 + 1) * (v[x+1] - v[x-1]) = 4 * 2/3 = 8/3
    np.testing.assert_allclose(g.gx[1:3, 1:3], 8.0 / 3.0, atol=1e-12)
    # replicate border: 4 * (v[1] - v[0]) = 4/3
    np.testing.assert_allclose(g.gx[:, 0], 4.0 / 3.0, atol=1e-12)
    assert np.all(g.gy == 0.0)


def test_sobel_rejects_color():
    with pytest.raises(ContractError):
        imaging.sobel(np.zeros((4, 4, 3)))


def test_sobel_matches_loop_oracle():
    rng = np.random.default_rng(5)
    for _ in range(10):
        img = rng.random((9, 13))
        g = imaging.sobel(img)
        gx, gy = sobel_loop(img.tolist())
        np.testing.assert_allclose(g.gx, gx, atol=1e-12)
        np.testing.assert_allclose(g.gy, gy, atol=1e-12)
        np.testing.assert_allclose(g.magnitude, np.sqrt(gx**2 + gy**2), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(0.0, 1.0)), st.floats(0.0, 10.0))
def test_sobel_positive_homogeneity(img, a):
    m1 = imaging.sobel(a * img).magnitude
    m2 = a * imaging.sobel(img).magnitude
    np.testing.assert_allclose(m1, m2, atol=1e-9)
