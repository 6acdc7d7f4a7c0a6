import io

import numpy as np
import pytest
from PIL import Image

from contrastcam.cam import SaliencyMap
from contrastcam.errors import ImageFormatError, ShapeError
from contrastcam.imageio import (
    ImageBuffer,
    RenderSpec,
    decode_image,
    encode_png,
    load_and_preprocess,
    preprocess_buffer,
    render,
    resize_buffer,
    write_png,
)
from contrastcam.model import InputSpec
from contrastcam.tensor import Tensor


def png_bytes(arr, mode="RGB"):
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def smap(vals, signed=False, normalized=False):
    return SaliencyMap(
        Tensor(np.asarray(vals, dtype=np.float32)), signed=signed, normalized=normalized, target="t", layer="l"
    )


def gray_spec(h=2, w=2, mean=0.0, std=1.0):
    return InputSpec(shape=(1, h, w), mean=(mean,), std=(std,))


class TestImageBuffer:
    def test_properties(self):
        img = ImageBuffer(np.zeros((2, 3, 3), dtype=np.uint8))
        assert (img.width, img.height) == (3, 2)
        assert len(img.pixels) == 18

    def test_rejects_bad_shapes(self):
        with pytest.raises(ImageFormatError):
            ImageBuffer(np.zeros((2, 3), dtype=np.uint8))
        with pytest.raises(ImageFormatError):
            ImageBuffer(np.zeros((2, 3, 4), dtype=np.uint8))
        with pytest.raises(ImageFormatError):
            ImageBuffer(np.zeros((2, 3, 3), dtype=np.float32))
        with pytest.raises(ImageFormatError):
            ImageBuffer(np.zeros((0, 3, 3), dtype=np.uint8))

    def test_equality(self):
        a = ImageBuffer(np.full((1, 1, 3), 7, dtype=np.uint8))
        b = ImageBuffer(np.full((1, 1, 3), 7, dtype=np.uint8))
        assert a == b and hash(a) == hash(b)


class TestDecode:
    def test_png_rgb(self):
        arr = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
        img = decode_image(png_bytes(arr))
        np.testing.assert_array_equal(img.array, arr)

    def test_png_alpha_dropped(self):
        rgba = np.zeros((1, 1, 4), dtype=np.uint8)
        rgba[0, 0] = [10, 20, 30, 40]
        img = decode_image(png_bytes(rgba, mode="RGBA"))
        assert img.array[0, 0].tolist() == [10, 20, 30]

    def test_png_grayscale_expanded(self):
        gray = np.array([[100, 200]], dtype=np.uint8)
        img = decode_image(png_bytes(gray, mode="L"))
        assert img.array[0, 0].tolist() == [100, 100, 100]

    def test_ppm_p6(self):
        data = b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255])
        img = decode_image(data)
        assert img.array[0, 0].tolist() == [255, 0, 0]
        assert img.array[0, 1].tolist() == [0, 0, 255]

    def test_garbage_rejected(self):
        with pytest.raises(ImageFormatError):
            decode_image(b"not an image at all")

    def test_jpeg_rejected(self):
        arr = np.zeros((2, 2, 3), dtype=np.uint8)
        buf = io.BytesIO()
        Image.fromarray(arr).save(buf, format="JPEG")
        with pytest.raises(ImageFormatError, match="JPEG"):
            decode_image(buf.getvalue())


class TestPreprocess:
    def test_solid_gray_normalization(self):
        arr = np.full((2, 2, 3), 128, dtype=np.uint8)
        spec = InputSpec(shape=(3, 2, 2), mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5))
        x = load_and_preprocess(png_bytes(arr), spec)
        np.testing.assert_allclose(x.array, 128 / 255 * 2 - 1, atol=1e-6)
        assert x.array[0, 0, 0, 0] == pytest.approx(0.0039, abs=1e-4)

    def test_identity_mean_std_is_pixel_over_255(self):
        arr = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
        spec = InputSpec(shape=(3, 2, 2), mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0))
        x = load_and_preprocess(png_bytes(arr), spec)
        expect = arr.astype(np.float64).transpose(2, 0, 1)[None] / 255.0
        np.testing.assert_array_equal(x.array, expect.astype(np.float32))

    def test_at_size_image_is_not_resampled(self):
        arr = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
        spec = InputSpec(shape=(3, 2, 2), mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0))
        a = load_and_preprocess(png_bytes(arr), spec)
        assert a.shape == (1, 3, 2, 2)

    def test_resize_applied(self):
        arr = np.zeros((4, 6, 3), dtype=np.uint8)
        spec = InputSpec(shape=(3, 2, 2), mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0))
        assert load_and_preprocess(png_bytes(arr), spec).shape == (1, 3, 2, 2)

    def test_grayscale_model_uses_channel_mean(self):
        arr = np.zeros((1, 1, 3), dtype=np.uint8)
        arr[0, 0] = [30, 60, 90]
        x = load_and_preprocess(png_bytes(arr), gray_spec(1, 1))
        assert float(x.array[0, 0, 0, 0]) == pytest.approx(60 / 255, abs=1e-6)

    def test_unmappable_channel_count(self):
        spec = InputSpec(shape=(5, 2, 2), mean=(0,) * 5, std=(1,) * 5)
        with pytest.raises(ShapeError):
            preprocess_buffer(ImageBuffer(np.zeros((2, 2, 3), dtype=np.uint8)), spec)


class TestRenderSpec:
    def test_defaults(self):
        spec = RenderSpec()
        assert (spec.mode, spec.alpha, spec.boost) == ("sequential", 0.5, 1.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            RenderSpec(mode="rainbow")
        with pytest.raises(ValueError):
            RenderSpec(alpha=1.5)
        with pytest.raises(ValueError):
            RenderSpec(boost=0.0)


class TestRender:
    base = ImageBuffer(np.full((2, 2, 3), 100, dtype=np.uint8))

    def test_full_value_full_alpha_is_red(self):
        out = render(smap(np.ones((2, 2)), normalized=True), self.base, RenderSpec(alpha=1.0))
        assert out.array[0, 0].tolist() == [255, 0, 0]

    def test_zero_alpha_keeps_base(self):
        out = render(smap(np.zeros((2, 2))), self.base, RenderSpec(alpha=0.0))
        assert out == self.base
        signed_out = render(smap(np.ones((2, 2)), signed=True), self.base, RenderSpec(mode="signed", alpha=0.0))
        assert signed_out == self.base

    def test_zero_value_blends_blue(self):
        out = render(smap(np.zeros((2, 2))), self.base, RenderSpec(alpha=1.0))
        assert out.array[0, 0].tolist() == [0, 0, 255]

    def test_blend_rounds_half_up(self):
        base = ImageBuffer(np.full((1, 1, 3), 100, dtype=np.uint8))
        out = render(smap([[1.0]], normalized=True), base, RenderSpec(alpha=0.5))
        # R: 0.5*100 + 0.5*255 = 177.5 -> 178; G and B blend toward 0 -> 50
        assert out.array[0, 0].tolist() == [178, 50, 50]

    def test_monotone_in_value(self):
        vals = np.array([[0.1, 0.4], [0.6, 0.9]])
        out = render(smap(vals, normalized=True), self.base, RenderSpec(alpha=0.7))
        reds = out.array[:, :, 0].astype(int).reshape(-1)
        order = vals.reshape(-1).argsort()
        assert list(reds[order]) == sorted(reds[order])

    def test_boost_saturates(self):
        a = render(smap([[0.3]], normalized=True), ImageBuffer(np.zeros((1, 1, 3), dtype=np.uint8)), RenderSpec(boost=10.0))
        b = render(smap([[1.0]], normalized=True), ImageBuffer(np.zeros((1, 1, 3), dtype=np.uint8)), RenderSpec())
        assert a == b

    def test_signed_zero_map_is_base(self):
        out = render(smap(np.zeros((2, 2)), signed=True), self.base, RenderSpec(mode="signed", alpha=0.9))
        assert out == self.base

    def test_signed_ramps_never_mix(self):
        vals = np.array([[0.5, -0.5], [0.0, 1.0]])
        out = render(smap(vals, signed=True), self.base, RenderSpec(mode="signed", alpha=1.0))
        # positive pixels: red rises, green/blue fall
        assert out.array[0, 0, 0] > 100 and out.array[0, 0, 1] < 100 and out.array[0, 0, 2] < 100
        # negative pixels: green rises, red/blue fall
        assert out.array[0, 1, 1] > 100 and out.array[0, 1, 0] < 100 and out.array[0, 1, 2] < 100
        # zero pixel: untouched base
        assert out.array[1, 0].tolist() == [100, 100, 100]
        # peak magnitude at full alpha: pure ramp color
        assert out.array[1, 1].tolist() == [255, 0, 0]

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            render(smap(np.zeros((3, 3))), self.base)


class TestResizeBuffer:
    def test_identity_returns_same_object(self):
        img = ImageBuffer(np.zeros((2, 2, 3), dtype=np.uint8))
        assert resize_buffer(img, 2, 2) is img

    def test_upscale_shape_and_range(self):
        img = ImageBuffer(np.array([[[0, 0, 0], [255, 255, 255]]], dtype=np.uint8))
        out = resize_buffer(img, 2, 4)
        assert (out.height, out.width) == (2, 4)
        assert out.array[0, 0, 0] == 0 and out.array[0, 3, 0] == 255


class TestPngIO:
    def test_single_red_pixel_round_trip(self, tmp_path):
        img = ImageBuffer(np.array([[[255, 0, 0]]], dtype=np.uint8))
        path = tmp_path / "red.png"
        write_png(img, path)
        assert decode_image(path.read_bytes()) == img

    def test_gradient_round_trip(self, tmp_path):
        arr = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
        path = tmp_path / "grad.png"
        write_png(ImageBuffer(arr), path)
        np.testing.assert_array_equal(decode_image(path.read_bytes()).array, arr)

    def test_unwritable_directory(self, tmp_path):
        img = ImageBuffer(np.zeros((1, 1, 3), dtype=np.uint8))
        with pytest.raises(OSError):
            write_png(img, tmp_path / "missing" / "out.png")
        assert not list(tmp_path.iterdir())

    def test_encode_is_deterministic(self):
        img = ImageBuffer(np.arange(12, dtype=np.uint8).reshape(2, 2, 3))
        assert encode_png(img) == encode_png(img)
