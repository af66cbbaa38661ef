"""Dataset containers, pool construction and dataset file I/O.

Features are stored one image per column: a ``FeatureMatrix`` with ``d``
rows and ``n`` columns. Ground-truth identities travel with the matrix so
that pools and test sets can be drawn, but only the pipeline's oracle reads
them.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from repsel.errors import DataFormatError, InsufficientDataError, ShapeError

QUERIED = "queried"
PROPAGATED = "propagated"

BINARY_MAGIC = b"RSEL1"


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Feature columns for a set of images.

    ``data`` has shape ``(d, n)``; ``image_ids``, ``camera_ids`` and
    ``true_labels`` all have length ``n``.
    """

    data: np.ndarray
    image_ids: tuple = ()
    camera_ids: np.ndarray = None
    true_labels: np.ndarray = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeError(f"feature data must be 2-D (d, n), got shape {data.shape}")
        d, n = data.shape
        if d < 1:
            raise ShapeError("feature dimension d must be >= 1")
        if not np.all(np.isfinite(data)):
            bad = np.argwhere(~np.isfinite(data))[0]
            raise DataFormatError(f"non-finite feature value at row {bad[0]}, column {bad[1]}")
        ids = tuple(str(i) for i in self.image_ids) if len(self.image_ids) else tuple(str(i) for i in range(n))
        cams = np.zeros(n, dtype=np.int64) if self.camera_ids is None else self.camera_ids
        labels = np.full(n, -1, dtype=np.int64) if self.true_labels is None else self.true_labels
        if not (len(ids) == len(cams) == len(labels) == n):
            raise ShapeError(
                f"inconsistent lengths: n={n}, ids={len(ids)}, cameras={len(cams)}, labels={len(labels)}"
            )
        object.__setattr__(self, "data", _frozen(data, np.float64))
        object.__setattr__(self, "image_ids", ids)
        object.__setattr__(self, "camera_ids", _frozen(cams, np.int64))
        object.__setattr__(self, "true_labels", _frozen(labels, np.int64))

    @property
    def d(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    def subset(self, indices) -> "FeatureMatrix":
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        return FeatureMatrix(
            self.data[:, idx],
            tuple(self.image_ids[i] for i in idx),
            self.camera_ids[idx],
            self.true_labels[idx],
        )

    def with_data(self, data) -> "FeatureMatrix":
        """Same images, new feature columns (e.g. after an embedding)."""
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != self.n:
            raise ShapeError(f"replacement data must have {self.n} columns, got shape {data.shape}")
        return FeatureMatrix(data, self.image_ids, self.camera_ids, self.true_labels)


@dataclass(frozen=True, eq=False)
class LabeledDictionary:
    """Annotated feature columns, append-only."""

    data: np.ndarray
    labels: np.ndarray = None
    provenance: tuple = ()
    image_ids: tuple = ()

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeError(f"dictionary data must be 2-D (d, n0), got shape {data.shape}")
        n0 = data.shape[1]
        labels = np.zeros(0, dtype=np.int64) if self.labels is None else np.asarray(self.labels)
        prov = tuple(self.provenance) if len(self.provenance) else (QUERIED,) * n0
        ids = tuple(str(i) for i in self.image_ids) if len(self.image_ids) else tuple(f"dict{i}" for i in range(n0))
        if not (len(labels) == len(prov) == len(ids) == n0):
            raise ShapeError(
                f"inconsistent dictionary lengths: n0={n0}, labels={len(labels)}, "
                f"provenance={len(prov)}, ids={len(ids)}"
            )
        bad = [p for p in prov if p not in (QUERIED, PROPAGATED)]
        if bad:
            raise ValueError(f"unknown provenance flag {bad[0]!r}")
        object.__setattr__(self, "data", _frozen(data, np.float64))
        object.__setattr__(self, "labels", _frozen(labels, np.int64))
        object.__setattr__(self, "provenance", prov)
        object.__setattr__(self, "image_ids", ids)

    @classmethod
    def empty(cls, d: int) -> "LabeledDictionary":
        return cls(np.zeros((d, 0)))

    @property
    def d(self) -> int:
        return self.data.shape[0]

    @property
    def n0(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.n0


@dataclass(frozen=True)
class PoolSpec:
    """How many images per (person, camera) go into the unlabeled pool.

    ``tiers`` is a sequence of ``(fraction_of_persons, images_per_camera)``
    pairs used in imbalanced mode.
    """

    mode: str = "balanced"
    images_per_person_per_camera: int = 2
    tiers: tuple = ((0.2, 10), (0.5, 4), (0.3, 2))
    test_images_per_person_per_camera: int = 2

    def __post_init__(self):
        if self.mode not in ("balanced", "imbalanced"):
            raise ValueError(f"pool mode must be 'balanced' or 'imbalanced', got {self.mode!r}")
        object.__setattr__(self, "tiers", tuple((float(f), int(c)) for f, c in self.tiers))
        if self.mode == "balanced":
            if self.images_per_person_per_camera < 1:
                raise ValueError("images_per_person_per_camera must be >= 1")
        else:
            if not self.tiers:
                raise ValueError("imbalanced pool needs at least one tier")
            total = sum(f for f, _ in self.tiers)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"tier fractions must sum to 1, got {total!r}")
            if any(c < 1 or f < 0 for f, c in self.tiers):
                raise ValueError("every tier needs a nonnegative fraction and a count >= 1")
        if self.test_images_per_person_per_camera < 0:
            raise ValueError("test_images_per_person_per_camera must be >= 0")

    def tier_sizes(self, n_persons: int) -> list[int]:
        """Split ``n_persons`` across tiers by largest remainder."""
        raw = [f * n_persons for f, _ in self.tiers]
        sizes = [math.floor(r + 1e-9) for r in raw]
        left = n_persons - sum(sizes)
        order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
        for i in order[:left]:
            sizes[i] += 1
        return sizes


def center_columns(m: FeatureMatrix) -> tuple[FeatureMatrix, np.ndarray]:
    """Subtract the mean column; returns the centered matrix and the mean."""
    if m.n == 0:
        raise ValueError("empty input")
    mean = m.data.mean(axis=1)
    return m.with_data(m.data - mean[:, None]), mean


def cosine_similarity(m) -> np.ndarray:
    """Pairwise cosine similarity between columns, shape ``(n, n)``."""
    x = m.data if isinstance(m, FeatureMatrix) else np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(x, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"column {int(zero[0])} has zero norm; cosine similarity undefined")
    xn = x / norms
    s = xn.T @ xn
    s = 0.5 * (s + s.T)
    np.clip(s, -1.0, 1.0, out=s)
    np.fill_diagonal(s, 1.0)
    return s


def build_pools(dataset: FeatureMatrix, spec: PoolSpec, seed: int) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Draw a disjoint unlabeled pool and test set from ``dataset``.

    Every (person, camera) pair gets its pool quota plus
    ``spec.test_images_per_person_per_camera`` test images, sampled without
    replacement with a single generator seeded by ``seed``.
    """
    rng = np.random.default_rng(seed)
    persons = np.unique(dataset.true_labels)
    cameras = np.unique(dataset.camera_ids)

    if spec.mode == "balanced":
        quota = {int(p): spec.images_per_person_per_camera for p in persons}
    else:
        order = rng.permutation(len(persons))
        quota = {}
        start = 0
        for size, (_, count) in zip(spec.tier_sizes(len(persons)), spec.tiers):
            for j in order[start:start + size]:
                quota[int(persons[j])] = count
            start += size

    n_test = spec.test_images_per_person_per_camera
    pool_idx, test_idx, deficits = [], [], []
    for p in persons:
        for c in cameras:
            members = np.flatnonzero((dataset.true_labels == p) & (dataset.camera_ids == c))
            need = quota[int(p)] + n_test
            if len(members) < need:
                deficits.append((int(p), int(c), len(members), need))
                continue
            drawn = rng.choice(members, size=need, replace=False)
            pool_idx.extend(drawn[: quota[int(p)]])
            test_idx.extend(drawn[quota[int(p)]:])
    if deficits:
        raise InsufficientDataError(deficits)
    return dataset.subset(np.sort(pool_idx)), dataset.subset(np.sort(test_idx))


# --------------------------------------------------------------------------
# file formats

def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in ("csv", "binary"):
            raise ValueError(f"unknown dataset format {fmt!r}")
        return fmt
    return "csv" if str(path).lower().endswith(".csv") else "binary"


def save_dataset(m: FeatureMatrix, path, format: str | None = None) -> None:
    fmt = _infer_format(path, format)
    path = Path(path)
    if fmt == "csv":
        path.write_text(dumps_csv(m), encoding="utf-8", newline="")
    else:
        path.write_bytes(dumps_binary(m))


def load_dataset(path, format: str | None = None) -> FeatureMatrix:
    fmt = _infer_format(path, format)
    path = Path(path)
    if fmt == "csv":
        return loads_csv(path.read_text(encoding="utf-8"))
    return loads_binary(path.read_bytes())


def dumps_csv(m: FeatureMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "camera", "label"] + [f"f{j}" for j in range(m.d)])
    for i in range(m.n):
        w.writerow(
            [m.image_ids[i], int(m.camera_ids[i]), int(m.true_labels[i])]
            + [repr(float(v)) for v in m.data[:, i]]
        )
    return buf.getvalue()


def loads_csv(text: str) -> FeatureMatrix:
    rows = csv.reader(io.StringIO(text))
    try:
        header = next(rows)
    except StopIteration:
        raise DataFormatError("missing header") from None
    if not header or all(not h.strip() for h in header):
        raise DataFormatError("missing header")
    d = len(header) - 3
    expected = ["id", "camera", "label"] + [f"f{j}" for j in range(d)]
    if d < 1 or [h.strip() for h in header] != expected:
        raise DataFormatError(f"line 1: malformed header, expected 'id,camera,label,f0,...,f{{d-1}}' with d >= 1")
    ids, cams, labels, cols = [], [], [], []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != d + 3:
            raise DataFormatError(f"line {lineno}: expected {d + 3} fields, got {len(row)}")
        try:
            cam, lab = int(row[1]), int(row[2])
        except ValueError:
            raise DataFormatError(f"line {lineno}: camera and label must be integers") from None
        try:
            vals = [float(v) for v in row[3:]]
        except ValueError as exc:
            raise DataFormatError(f"line {lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataFormatError(f"line {lineno}: non-finite feature value")
        ids.append(row[0])
        cams.append(cam)
        labels.append(lab)
        cols.append(vals)
    data = np.array(cols, dtype=np.float64).T if cols else np.zeros((d, 0))
    return FeatureMatrix(data, tuple(ids), np.array(cams, dtype=np.int64), np.array(labels, dtype=np.int64))


def dumps_binary(m: FeatureMatrix) -> bytes:
    if np.any(m.camera_ids < 0) or np.any(m.true_labels < 0):
        raise DataFormatError("binary format stores camera ids and labels as u32; negative values found")
    parts = [BINARY_MAGIC, struct.pack("<II", m.n, m.d)]
    parts.append(np.asarray(m.data, dtype="<f8").tobytes(order="F"))
    parts.append(np.asarray(m.camera_ids, dtype="<u4").tobytes())
    parts.append(np.asarray(m.true_labels, dtype="<u4").tobytes())
    for s in m.image_ids:
        raw = s.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
    return b"".join(parts)


def loads_binary(blob: bytes) -> FeatureMatrix:
    if len(blob) == 0:
        raise DataFormatError("missing header")
    if blob[:5] != BINARY_MAGIC:
        raise DataFormatError(f"bad magic {blob[:5]!r}, expected {BINARY_MAGIC!r}")
    if len(blob) < 13:
        raise DataFormatError("missing header: truncated before n, d")
    n, d = struct.unpack_from("<II", blob, 5)
    if d < 1:
        raise DataFormatError("header declares d = 0")
    off = 13

    def take(nbytes, what):
        nonlocal off
        if off + nbytes > len(blob):
            raise DataFormatError(f"truncated {what}: need {nbytes} bytes at offset {off}, have {len(blob) - off}")
        chunk = blob[off:off + nbytes]
        off += nbytes
        return chunk

    data = np.frombuffer(take(8 * n * d, "feature payload"), dtype="<f8").reshape((d, n), order="F")
    if not np.all(np.isfinite(data)):
        raise DataFormatError("non-finite feature value in binary payload")
    cams = np.frombuffer(take(4 * n, "camera ids"), dtype="<u4").astype(np.int64)
    labels = np.frombuffer(take(4 * n, "labels"), dtype="<u4").astype(np.int64)
    ids = []
    for i in range(n):
        (length,) = struct.unpack("<I", take(4, f"id length {i}"))
        try:
            ids.append(take(length, f"id {i}").decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise DataFormatError(f"id {i} is not valid UTF-8: {exc}") from None
    if off != len(blob):
        raise DataFormatError(f"{len(blob) - off} trailing bytes after payload")
    return FeatureMatrix(data.copy(), tuple(ids), cams, labels)


def concat(matrices: Sequence[FeatureMatrix]) -> FeatureMatrix:
    if not matrices:
        raise ValueError("nothing to concatenate")
    return FeatureMatrix(
        np.concatenate([m.data for m in matrices], axis=1),
        sum((m.image_ids for m in matrices), ()),
        np.concatenate([m.camera_ids for m in matrices]),
        np.concatenate([m.true_labels for m in matrices]),
    )
