"""Block-mean HSV appearance features for pedestrian crops.

Images are resized to 128 x 64 (rows x cols), cut into head / torso / legs
strips at fixed height ratios, and the head is dropped. Torso and legs are
tiled with 16-tall x 8-wide blocks overlapping by half in both directions;
each block contributes its mean hue (circular), saturation and value.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from repsel.data import FeatureMatrix
from repsel.errors import DataFormatError

HEIGHT, WIDTH = 128, 64
BLOCK_H, BLOCK_W = 16, 8
STEP_H, STEP_W = BLOCK_H // 2, BLOCK_W // 2
HEAD_END = round(0.16 * HEIGHT)
TORSO_END = round(0.55 * HEIGHT)
STRIPS = ((HEAD_END, TORSO_END), (TORSO_END, HEIGHT))   # torso, legs


def _blocks_along(length, block, step):
    return (length - block) // step + 1 if length >= block else 0


def block_grid():
    """Top-left corners of every block, torso first, row-major."""
    corners = []
    for top, bottom in STRIPS:
        for i in range(_blocks_along(bottom - top, BLOCK_H, STEP_H)):
            for j in range(_blocks_along(WIDTH, BLOCK_W, STEP_W)):
                corners.append((top + i * STEP_H, j * STEP_W))
    return corners


FEATURE_DIM = 3 * len(block_grid())


@dataclass(frozen=True, eq=False)
class RawImage:
    width: int
    height: int
    pixels: np.ndarray      # (height, width, 3), values in [0, 255]
    id: str = ""
    camera_id: int = 0
    label: int = 0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.size != 3 * self.width * self.height:
            raise ValueError(f"pixel buffer has {px.size} values, expected {3 * self.width * self.height}")
        object.__setattr__(self, "pixels", px.reshape(self.height, self.width, 3))


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres; same-size input is returned unchanged."""
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()

    def coords(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    r0, r1, fr = coords(out_h, in_h)
    c0, c1, fc = coords(out_w, in_w)
    top = img[r0][:, c0] * (1 - fc)[None, :, None] + img[r0][:, c1] * fc[None, :, None]
    bot = img[r1][:, c0] * (1 - fc)[None, :, None] + img[r1][:, c1] * fc[None, :, None]
    return top * (1 - fr)[:, None, None] + bot * fr[:, None, None]


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorised ``colorsys.rgb_to_hsv`` on values in [0, 1]; H in [0, 1)."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    v = maxc
    s = np.divide(delta, maxc, out=np.zeros_like(maxc), where=maxc > 0)
    safe = np.where(delta > 0, delta, 1.0)
    rc, gc, bc = (maxc - r) / safe, (maxc - g) / safe, (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def _circular_mean(h: np.ndarray) -> float:
    ang = 2.0 * np.pi * h
    m = np.arctan2(np.sin(ang).mean(), np.cos(ang).mean()) / (2.0 * np.pi)
    m %= 1.0
    return 0.0 if m >= 1.0 else float(m)


def extract_hsv_blocks(img: RawImage) -> np.ndarray:
    """Feature vector of length ``FEATURE_DIM``: (H, S, V) per block."""
    if img.width == 0 or img.height == 0:
        raise ValueError("zero-size image")
    px = resize_bilinear(img.pixels, HEIGHT, WIDTH)
    hsv = rgb_to_hsv(np.clip(px, 0.0, 255.0) / 255.0)
    out = np.empty(FEATURE_DIM)
    for b, (top, left) in enumerate(block_grid()):
        blk = hsv[top:top + BLOCK_H, left:left + BLOCK_W]
        out[3 * b] = _circular_mean(blk[..., 0])
        out[3 * b + 1] = blk[..., 1].mean()
        out[3 * b + 2] = blk[..., 2].mean()
    return out


# --------------------------------------------------------------------------
# PPM

def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif buf[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise DataFormatError("truncated PPM header")
    return buf[start:pos], pos


def parse_ppm(blob: bytes, **meta) -> RawImage:
    magic = blob[:2]
    if magic in (b"P1", b"P2", b"P3", b"P4", b"P5", b"P7"):
        raise DataFormatError(f"unsupported variant {magic.decode()}: only binary P6 is accepted")
    if magic != b"P6":
        raise DataFormatError(f"not a PPM file (magic {magic!r})")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(blob, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise DataFormatError(f"bad PPM header field {tok!r}") from None
    width, height, maxval = fields
    if not 0 < maxval < 256:
        raise DataFormatError(f"only 8-bit PPM is supported, maxval={maxval}")
    pos += 1  # single whitespace byte before the raster
    expected = 3 * width * height
    payload = blob[pos:pos + expected]
    if len(payload) < expected:
        raise DataFormatError(f"truncated payload: expected {expected} bytes, got {len(payload)}")
    px = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    if maxval != 255:
        px = px * (255.0 / maxval)
    return RawImage(width, height, px.reshape(height, width, 3), **meta)


def load_ppm(path, **meta) -> RawImage:
    return parse_ppm(Path(path).read_bytes(), **meta)


def dumps_ppm(pixels: np.ndarray) -> bytes:
    px = np.asarray(pixels)
    h, w = px.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode() + np.clip(np.rint(px), 0, 255).astype(np.uint8).tobytes()


def extract_from_manifest(manifest, root=None) -> FeatureMatrix:
    """Features for every row ``id,camera,label,path`` of a manifest CSV.

    Relative paths resolve against ``root`` (default: the manifest's folder).
    """
    manifest = Path(manifest)
    root = Path(root) if root is not None else manifest.parent
    ids, cams, labels, cols = [], [], [], []
    with manifest.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "camera", "label", "path"]:
            raise DataFormatError("line 1: manifest header must be 'id,camera,label,path'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataFormatError(f"line {lineno}: expected 4 fields, got {len(row)}")
            try:
                cam, lab = int(row[1]), int(row[2])
            except ValueError:
                raise DataFormatError(f"line {lineno}: camera and label must be integers") from None
            path = Path(row[3])
            img = load_ppm(path if path.is_absolute() else root / path, id=row[0], camera_id=cam, label=lab)
            ids.append(row[0])
            cams.append(cam)
            labels.append(lab)
            cols.append(extract_hsv_blocks(img))
    data = np.array(cols).T if cols else np.zeros((FEATURE_DIM, 0))
    return FeatureMatrix(data, tuple(ids), np.array(cams, dtype=np.int64), np.array(labels, dtype=np.int64))
