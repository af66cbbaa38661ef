import numpy as np
import pytest

from oracles import bilinear_pixel, hsv_block_mean
from repsel.errors import DataFormatError
from repsel.features import (
    BLOCK_H,
    BLOCK_W,
    FEATURE_DIM,
    HEIGHT,
    TORSO_END,
    WIDTH,
    RawImage,
    block_grid,
    dumps_ppm,
    extract_from_manifest,
    extract_hsv_blocks,
    load_ppm,
    parse_ppm,
    resize_bilinear,
    rgb_to_hsv,
)


def _solid(rgb, h=HEIGHT, w=WIDTH):
    return RawImage(w, h, np.broadcast_to(np.array(rgb, float), (h, w, 3)))


def _blocks(vec):
    return vec.reshape(-1, 3)


def test_geometry():
    grid = block_grid()
    assert FEATURE_DIM == 3 * len(grid) == 495
    for top, left in grid:
        assert top >= round(0.16 * HEIGHT)
        assert top + BLOCK_H <= HEIGHT and left + BLOCK_W <= WIDTH
    # torso blocks never straddle the torso / legs boundary
    assert all(t + BLOCK_H <= TORSO_END or t >= TORSO_END for t, _ in grid)


def test_gray_image():
    f = _blocks(extract_hsv_blocks(_solid([127.5, 127.5, 127.5], 60, 30)))
    assert np.max(np.abs(f[:, 1])) <= 1e-6
    assert np.max(np.abs(f[:, 2] - 0.5)) <= 1e-6


def test_red_image():
    f = _blocks(extract_hsv_blocks(_solid([255, 0, 0], 200, 90)))
    assert np.max(np.abs(f - [0.0, 1.0, 1.0])) <= 1e-12


def test_two_band_image():
    a, b = np.array([30.0, 200.0, 90.0]), np.array([250.0, 250.0, 10.0])
    px = np.empty((HEIGHT, WIDTH, 3))
    px[:TORSO_END] = a
    px[TORSO_END:] = b
    f = _blocks(extract_hsv_blocks(RawImage(WIDTH, HEIGHT, px)))
    grid = block_grid()
    torso = np.array([t < TORSO_END for t, _ in grid])
    ha = hsv_block_mean(a[None, None])
    hb = hsv_block_mean(b[None, None])
    assert np.allclose(f[torso], ha, atol=1e-12)
    assert np.allclose(f[~torso], hb, atol=1e-12)
    assert torso.sum() == 5 * 15 and (~torso).sum() == 6 * 15


def test_matches_colorsys_oracle(rng):
    px = rng.integers(0, 256, (HEIGHT, WIDTH, 3)).astype(float)
    f = _blocks(extract_hsv_blocks(RawImage(WIDTH, HEIGHT, px)))
    for b, (top, left) in enumerate(block_grid()[::17]):
        expected = hsv_block_mean(px[top:top + BLOCK_H, left:left + BLOCK_W])
        got = f[17 * b]
        dh = abs(got[0] - expected[0])
        assert min(dh, 1 - dh) <= 1e-9
        assert np.allclose(got[1:], expected[1:], atol=1e-12)


def test_rgb_to_hsv_vs_colorsys(rng):
    import colorsys

    rgb = rng.random((50, 3))
    rgb[0] = [0.2, 0.2, 0.2]
    ours = rgb_to_hsv(rgb)
    for row, out in zip(rgb, ours):
        assert np.allclose(out, colorsys.rgb_to_hsv(*row), atol=1e-12)


@pytest.mark.parametrize("shape", [(37, 19), (128, 64), (300, 100), (5, 200)])
def test_bilinear_vs_oracle(shape, rng):
    img = rng.random(shape + (3,)) * 255
    out = resize_bilinear(img, 20, 11)
    for r in range(0, 20, 3):
        for c in range(0, 11, 2):
            assert np.allclose(out[r, c], bilinear_pixel(img, 20, 11, r, c), atol=1e-9)


def test_same_size_resize_is_identity(rng):
    img = rng.random((HEIGHT, WIDTH, 3))
    assert np.allclose(resize_bilinear(img, HEIGHT, WIDTH), img, atol=1e-12)


def test_feature_ranges_and_no_cross_image_state(rng):
    imgs = [RawImage(w, h, rng.integers(0, 256, (h, w, 3))) for h, w in [(90, 40), (128, 64), (64, 32)]]
    feats = [extract_hsv_blocks(i) for i in imgs]
    for f in feats:
        assert f.shape == (FEATURE_DIM,)
        hsv = _blocks(f)
        assert np.all((hsv[:, 0] >= 0) & (hsv[:, 0] < 1))
        assert np.all((hsv[:, 1:] >= 0) & (hsv[:, 1:] <= 1))
    again = [extract_hsv_blocks(i) for i in reversed(imgs)]
    for a, b in zip(feats, reversed(again)):
        assert np.array_equal(a, b)


def test_zero_size_image():
    with pytest.raises(ValueError, match="zero-size"):
        extract_hsv_blocks(RawImage(0, 0, np.zeros(0)))
    with pytest.raises(ValueError):
        RawImage(2, 2, np.zeros(11))


# ---------------------------------------------------------------- PPM

def test_ppm_single_pixel(tmp_path):
    path = tmp_path / "p.ppm"
    path.write_bytes(b"P6\n1 1\n255\n\xff\x00\x00")
    img = load_ppm(path, id="x", camera_id=2, label=9)
    assert (img.width, img.height) == (1, 1)
    assert np.array_equal(img.pixels[0, 0], [255, 0, 0])
    assert (img.id, img.camera_id, img.label) == ("x", 2, 9)


def test_ppm_round_trip_and_comments(rng):
    px = rng.integers(0, 256, (7, 5, 3))
    blob = dumps_ppm(px)
    assert np.array_equal(parse_ppm(blob).pixels, px)
    commented = b"P6 # made by hand\n5 7\n# max\n255\n" + blob.split(b"255\n", 1)[1]
    assert np.array_equal(parse_ppm(commented).pixels, px)


def test_ppm_errors():
    with pytest.raises(DataFormatError, match="unsupported variant"):
        parse_ppm(b"P3\n1 1\n255\n255 0 0\n")
    with pytest.raises(DataFormatError, match="expected 12 bytes, got 5"):
        parse_ppm(b"P6\n2 2\n255\n" + b"\0" * 5)
    with pytest.raises(DataFormatError, match="not a PPM"):
        parse_ppm(b"GIF89a")
    with pytest.raises(DataFormatError, match="8-bit"):
        parse_ppm(b"P6\n1 1\n65535\n" + b"\0" * 6)
    with pytest.raises(DataFormatError, match="truncated PPM header"):
        parse_ppm(b"P6\n1 ")


def test_manifest_extraction(tmp_path, rng):
    rows = ["id,camera,label,path"]
    imgs = []
    for i in range(3):
        px = rng.integers(0, 256, (40, 20, 3))
        (tmp_path / f"{i}.ppm").write_bytes(dumps_ppm(px))
        rows.append(f"img{i},{i % 2},{10 + i},{i}.ppm")
        imgs.append(RawImage(20, 40, px))
    (tmp_path / "m.csv").write_text("\n".join(rows) + "\n")
    m = extract_from_manifest(tmp_path / "m.csv")
    assert m.d == FEATURE_DIM and m.n == 3
    assert m.image_ids == ("img0", "img1", "img2")
    assert list(m.true_labels) == [10, 11, 12]
    assert np.array_equal(m.data[:, 1], extract_hsv_blocks(imgs[1]))


def test_manifest_errors(tmp_path):
    (tmp_path / "bad.csv").write_text("id,path\n")
    with pytest.raises(DataFormatError, match="line 1"):
        extract_from_manifest(tmp_path / "bad.csv")
    (tmp_path / "bad2.csv").write_text("id,camera,label,path\na,x,1,p.ppm\n")
    with pytest.raises(DataFormatError, match="line 2"):
        extract_from_manifest(tmp_path / "bad2.csv")
