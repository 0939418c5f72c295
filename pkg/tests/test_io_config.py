import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lbrgm import imageio
from lbrgm.config import ConfigError, RunConfig, dump_config, load_config, parse_config


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]), st.data())
def test_image_round_trip_within_quantisation(h, w, c, data):
    img = data.draw(arrays(np.float64, (h, w, c), elements=st.floats(0, 1)))
    back = imageio.decode_image(imageio.encode_image(img))
    assert back.shape == (h, w, c)
    assert np.all(np.abs(back - img) <= 0.5 / 255 + 1e-12)


def test_image_quantisation_rule_and_clipping():
    img = np.array([[[0.0], [1.0], [0.5], [-0.2]], [[1.7], [0.002], [0.998], [0.25]]])
    raw = imageio.encode_image(img)
    assert raw.startswith(b"P5\n4 2\n255\n")
    assert list(raw[-8:]) == [0, 255, 128, 0, 255, 1, 254, 64]


def test_header_comments_and_ppm(tmp_path):
    data = b"P6\n# made by hand\n2 1 # width height\n255\n" + bytes([255, 0, 0, 0, 0, 255])
    img = imageio.decode_image(data)
    np.testing.assert_array_equal(img[0, 0], [1, 0, 0])
    np.testing.assert_array_equal(img[0, 1], [0, 0, 1])
    path = tmp_path / "x.ppm"
    imageio.write_image(path, img)
    np.testing.assert_array_equal(imageio.read_image(path), img)


@pytest.mark.parametrize("data, message", [
    (b"P2\n1 1\n255\n0", "magic"),
    (b"P5\n2 2\n65535\n" + bytes(8), "maxval"),
    (b"P5\n2 2\n255\n\x00", "end of image"),
    (b"P5\n2", "end of header"),
    (b"P5\nx 2\n255\n\x00", "non-numeric"),
])
def test_bad_images(data, message):
    with pytest.raises(imageio.ImageFormatError, match=message):
        imageio.decode_image(data)


def test_mask_round_trip_and_bit_convention(tmp_path):
    m = np.zeros((3, 10), bool)
    m[:, :5] = True
    m[1, 9] = True
    raw = imageio.encode_mask(m)
    assert raw.startswith(b"P4\n10 3\n")
    assert raw[-6] == 0b11111000
    path = tmp_path / "m.pbm"
    imageio.write_mask(path, m)
    np.testing.assert_array_equal(imageio.read_mask(path), m)
    with pytest.raises(imageio.ImageFormatError):
        imageio.decode_mask(b"P5\n1 1\n")


def test_vector_sidecar_is_exact(tmp_path):
    v = np.random.default_rng(0).normal(size=7)
    imageio.write_vector(tmp_path / "z.txt", v)
    np.testing.assert_array_equal(imageio.read_vector(tmp_path / "z.txt"), v)


def test_config_defaults_and_overrides(tmp_path):
    cfg = parse_config("# comment\nmethod = brgm\niters=50\neta=0.05\noracle_stopping=yes\nop=down:4\n")
    assert (cfg.method, cfg.iters, cfg.eta, cfg.oracle_stopping, cfg.op) == ("brgm", 50, 0.05, True, "down:4")
    assert cfg.lambda_vgg == 2e7
    assert cfg.with_overrides(iters=7, eta=None).iters == 7
    sc = RunConfig().solver_config()
    assert (sc.iters, sc.n_init, sc.adam.eta, sc.adam.beta1, sc.adam.beta2) == (2000, 100, 0.1, 0.96, 0.9999)
    assert (sc.objective.lambda_pix, sc.objective.lambda_vgg, sc.objective.lambda_map,
            sc.objective.lambda_lat) == (2e-5, 2e7, 30.0, 0.4)


def test_manifest_round_trip(tmp_path):
    cfg = RunConfig(method="tied", eta=0.1 + 1e-17, lambda_pix=1 / 3, model="m.lbgm", oracle_stopping=True)
    path = tmp_path / "run.manifest"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


@pytest.mark.parametrize("text", ["bogus=1", "iters=ten", "oracle_stopping=maybe", "no equals sign"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)
