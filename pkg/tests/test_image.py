"""Image I/O and deterministic geometry."""

import math

import numpy as np
import pytest

from hierlearn.decomposer import PatchRegion
from hierlearn.image import (
    PgmHeaderError,
    PgmPayloadError,
    crop,
    load_image,
    resize,
    save_image,
)


def bilinear_reference(img, out_h, out_w):
    """Independent scalar evaluation of corner-aligned bilinear sampling."""
    in_h, in_w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            sr = 0.0 if out_h == 1 else i * (in_h - 1) / (out_h - 1)
            sc = 0.0 if out_w == 1 else j * (in_w - 1) / (out_w - 1)
            r0, c0 = math.floor(sr), math.floor(sc)
            r1, c1 = min(r0 + 1, in_h - 1), min(c0 + 1, in_w - 1)
            fr, fc = sr - r0, sc - c0
            val = (
                img[r0, c0] * (1 - fr) * (1 - fc)
                + img[r0, c1] * (1 - fr) * fc
                + img[r1, c0] * fr * (1 - fc)
                + img[r1, c1] * fr * fc
            )
            out[i, j] = min(max(val, 0.0), 1.0)
    return out


class TestPgmIO:
    def test_load_scales_by_maxval(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
        img = load_image(path)
        np.testing.assert_allclose(
            img, [[0.0, 1.0], [128 / 255, 64 / 255]], atol=1e-12
        )

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128]))
        with pytest.raises(PgmPayloadError):
            load_image(path)

    def test_roundtrip_within_quantization(self, tmp_path):
        rng = np.random.default_rng(42)
        img = rng.random((97, 53))
        path = tmp_path / "r.pgm"
        save_image(img, path)
        back = load_image(path)
        # brute-force max abs diff against the quantization bound
        assert np.abs(back - img).max() <= 1.0 / 255.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "absent.pgm")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P6\n1 1\n255\n\x00")
        with pytest.raises(PgmHeaderError):
            load_image(path)

    @pytest.mark.parametrize("header", [b"P5\n2 2\n300\n", b"P5\n0 2\n255\n", b"P5\n2 x\n255\n"])
    def test_malformed_headers(self, tmp_path, header):
        path = tmp_path / "t.pgm"
        path.write_bytes(header + bytes(4))
        with pytest.raises(PgmHeaderError):
            load_image(path)

    def test_header_comments_allowed(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n# comment\n1 1\n255\n\x80")
        assert load_image(path).shape == (1, 1)

    def test_writer_header_is_exact(self, tmp_path):
        path = tmp_path / "t.pgm"
        save_image(np.zeros((3, 5)), path)
        assert path.read_bytes().startswith(b"P5\n5 3\n255\n")


class TestCrop:
    def test_full_region_identity(self, rng):
        img = rng.random((17, 23))
        out = crop(img, PatchRegion(0, 0, 17, 23))
        np.testing.assert_array_equal(out, img)

    def test_single_pixel(self, rng):
        img = rng.random((9, 9))
        assert crop(img, PatchRegion(0, 0, 1, 1))[0, 0] == img[0, 0]

    def test_crop_of_crop_composes(self, rng):
        # composition oracle: crop(crop(img, A), B) == crop(img, A+B offsets)
        for _ in range(20):
            img = rng.random((32, 32))
            t1, l1 = rng.integers(0, 8, 2)
            h1, w1 = rng.integers(10, 20, 2)
            inner = crop(img, PatchRegion(int(t1), int(l1), int(h1), int(w1)))
            t2, l2 = rng.integers(0, 4, 2)
            h2, w2 = rng.integers(2, 6, 2)
            twice = crop(inner, PatchRegion(int(t2), int(l2), int(h2), int(w2)))
            once = crop(
                img, PatchRegion(int(t1 + t2), int(l1 + l2), int(h2), int(w2))
            )
            np.testing.assert_array_equal(twice, once)

    def test_out_of_bounds(self, rng):
        img = rng.random((8, 8))
        with pytest.raises(ValueError):
            crop(img, PatchRegion(4, 4, 8, 2))


class TestResize:
    def test_same_size_identity(self, rng):
        img = rng.random((13, 7))
        np.testing.assert_array_equal(resize(img, 13, 7), img)

    def test_constant_stays_constant(self):
        img = np.full((5, 9), 0.37)
        for out_h, out_w in [(1, 1), (3, 3), (17, 2), (9, 31)]:
            out = resize(img, out_h, out_w)
            np.testing.assert_allclose(out, 0.37, atol=1e-6)

    def test_ramp_2x4(self):
        img = np.array([[0.0, 1.0], [0.0, 1.0]])
        out = resize(img, 2, 4)
        expected = bilinear_reference(img, 2, 4)
        np.testing.assert_allclose(out, expected, atol=1e-12)
        np.testing.assert_allclose(out[0], [0.0, 1 / 3, 2 / 3, 1.0], atol=1e-12)

    def test_matches_scalar_reference(self, rng):
        for _ in range(10):
            img = rng.random((8, 8))
            out = resize(img, 13, 7)
            np.testing.assert_allclose(out, bilinear_reference(img, 13, 7), atol=1e-5)

    def test_bounds_and_finiteness(self, rng):
        for _ in range(10):
            img = rng.random((6, 11))
            out = resize(img, 9, 4)
            assert np.isfinite(out).all()
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_nonpositive_target(self, rng):
        with pytest.raises(ValueError):
            resize(rng.random((4, 4)), 0, 3)
