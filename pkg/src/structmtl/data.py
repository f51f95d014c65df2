"""Datasets of mixed sample kinds, a synthetic landmark generator and file I/O.

Images are flattened row-major vectors in [0, 1]. Landmarks are stored as
interleaved ``(x1, y1, x2, y2, ...)`` vectors normalized into [-1, 1].

File formats
------------
``*.pts``::

    version: 1
    n_points: 3
    {
    10.5 4.25
    ...
    }

``*.pgm``: binary 8-bit portable graymap (``P5``), square, side ``img_side``.

``manifest.tsv``: header ``kind<TAB>image_path<TAB>pts_path`` followed by one
row per sample, kind in {full, input_only, label_only}, absent paths empty,
paths relative to the dataset directory.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

FULL = "full"
INPUT_ONLY = "input_only"
LABEL_ONLY = "label_only"
KINDS = (FULL, INPUT_ONLY, LABEL_ONLY)

# zero-based eye groups of the 68-point annotation scheme
IBUG68_EYES = (tuple(range(36, 42)), tuple(range(42, 48)))


class DataError(ValueError):
    """Malformed or inconsistent dataset content."""


@dataclass(frozen=True)
class Sample:
    kind: str
    x: np.ndarray | None = None
    y: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown sample kind {self.kind!r}")
        want_x = self.kind in (FULL, INPUT_ONLY)
        want_y = self.kind in (FULL, LABEL_ONLY)
        if want_x != (self.x is not None) or want_y != (self.y is not None):
            raise DataError(f"{self.kind} sample has wrong payloads")


@dataclass
class Dataset:
    samples: list[Sample]
    d_x: int
    n_points: int
    img_side: int | None = None
    # per-sample generator parameters (theta, scale, shift_x, shift_y) for synthetic data
    meta: list[tuple[float, float, float, float]] | None = None

    def __len__(self) -> int:
        return len(self.samples)

    def validate(self) -> None:
        for i, s in enumerate(self.samples):
            if s.x is not None:
                if s.x.shape != (self.d_x,):
                    raise DataError(f"sample {i}: x has shape {s.x.shape}")
                if s.x.min() < 0.0 or s.x.max() > 1.0:
                    raise DataError(f"sample {i}: pixels outside [0, 1]")
            if s.y is not None:
                if s.y.shape != (2 * self.n_points,):
                    raise DataError(f"sample {i}: y has shape {s.y.shape}")
                if np.abs(s.y).max() > 1.0:
                    raise DataError(f"sample {i}: landmarks outside [-1, 1]")

    def counts(self) -> dict[str, int]:
        out = dict.fromkeys(KINDS, 0)
        for s in self.samples:
            out[s.kind] += 1
        return out

    def subset(self, idx) -> "Dataset":
        meta = None if self.meta is None else [self.meta[i] for i in idx]
        return replace(self, samples=[self.samples[i] for i in idx], meta=meta)

    def __add__(self, other: "Dataset") -> "Dataset":
        if (self.d_x, self.n_points) != (other.d_x, other.n_points):
            raise DataError("cannot concatenate datasets of different dimensions")
        meta = None
        if self.meta is not None and other.meta is not None:
            meta = self.meta + other.meta
        return replace(self, samples=self.samples + other.samples, meta=meta)

    def full_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) with one column per fully labeled sample."""
        S = [s for s in self.samples if s.kind == FULL]
        if not S:
            raise DataError("dataset has no fully labeled samples")
        return (np.stack([s.x for s in S], axis=1), np.stack([s.y for s in S], axis=1))


def partition(ds: Dataset) -> tuple[list[int], list[int], list[int]]:
    """Index lists F (has x), L (has y), S (has both)."""
    F = [i for i, s in enumerate(ds.samples) if s.x is not None]
    L = [i for i, s in enumerate(ds.samples) if s.y is not None]
    S = [i for i, s in enumerate(ds.samples) if s.kind == FULL]
    return F, L, S


def normalize_landmarks(points, img_side: float) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if np.any(p < 0.0) or np.any(p > img_side):
        raise DataError(f"landmark coordinates outside [0, {img_side}]")
    return 2.0 * p / img_side - 1.0


def denormalize(y, img_side: float) -> np.ndarray:
    return (np.asarray(y, dtype=np.float64) + 1.0) * img_side / 2.0


# -- synthetic generator -----------------------------------------------------

@dataclass(frozen=True)
class ShapeTemplate:
    points: np.ndarray  # (N, 2) in the unit square, (x, y) with y pointing down
    left_eye: tuple[int, ...]
    right_eye: tuple[int, ...]

    def __post_init__(self):
        if not self.left_eye or not self.right_eye:
            raise ValueError("eye groups must be non-empty")
        if set(self.left_eye) & set(self.right_eye):
            raise ValueError("eye groups must be disjoint")

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def eyes(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        return self.left_eye, self.right_eye


def default_template() -> ShapeTemplate:
    """Ten points: pentagon outline, two eyes, three mouth points."""
    ang = np.deg2rad(-90.0 + 72.0 * np.arange(5))
    outline = np.stack([0.5 + 0.4 * np.cos(ang), 0.5 + 0.4 * np.sin(ang)], axis=1)
    eyes = np.array([[0.36, 0.42], [0.64, 0.42]])
    mouth = np.array([[0.38, 0.68], [0.50, 0.74], [0.62, 0.68]])
    return ShapeTemplate(np.vstack([outline, eyes, mouth]), left_eye=(5,), right_eye=(6,))


@dataclass(frozen=True)
class SynthParams:
    img_side: int = 20
    rot_max_deg: float = 15.0
    scale_min: float = 0.8
    scale_max: float = 1.0
    shift_max: float = 0.08  # fraction of img_side, per axis
    noise_std: float = 0.05
    blob_sigma: float | None = None  # default img_side / 20
    max_retries: int = 100


def place_points(template: ShapeTemplate, theta: float, scale: float, shift, img_side: int) -> np.ndarray:
    """Pixel coordinates of the template under a similarity transform about the centre."""
    c, s = math.cos(theta), math.sin(theta)
    R = np.array([[c, -s], [s, c]])
    rel = (template.points - 0.5) @ R.T
    return img_side * (0.5 + scale * rel + np.asarray(shift, dtype=np.float64))


def render(points: np.ndarray, img_side: int, sigma: float) -> np.ndarray:
    centers = np.arange(img_side) + 0.5
    gx = np.exp(-((centers[None, :] - points[:, 0:1]) ** 2) / (2 * sigma * sigma))
    gy = np.exp(-((centers[None, :] - points[:, 1:2]) ** 2) / (2 * sigma * sigma))
    # img[r, c] = sum_k gy[k, r] * gx[k, c]
    return gy.T @ gx


def synth_generate(template: ShapeTemplate, n: int, params: SynthParams,
                   rng: np.random.Generator) -> Dataset:
    """Render ``n`` fully labeled samples of randomly transformed templates.

    Pixels are quantized to 8-bit levels so that written/reloaded datasets
    match the in-memory ones exactly.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    side = params.img_side
    sigma = params.blob_sigma if params.blob_sigma is not None else side / 20.0
    theta_max = math.radians(params.rot_max_deg)
    samples, meta = [], []
    for _ in range(n):
        for _attempt in range(params.max_retries):
            theta = rng.uniform(-theta_max, theta_max)
            scale = rng.uniform(params.scale_min, params.scale_max)
            shift = rng.uniform(-params.shift_max, params.shift_max, size=2)
            pts = place_points(template, theta, scale, shift, side)
            if np.all(pts >= 0.0) and np.all(pts <= side):
                break
        else:
            raise DataError("could not place template inside the frame; shrink transform ranges")
        img = render(pts, side, sigma)
        if params.noise_std > 0:
            img = img + rng.normal(0.0, params.noise_std, size=img.shape)
        img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
        y = normalize_landmarks(pts, side).reshape(-1)
        samples.append(Sample(FULL, img.reshape(-1), y))
        meta.append((theta, scale, float(shift[0]), float(shift[1])))
    return Dataset(samples, side * side, template.n_points, img_side=side, meta=meta)


def convert(ds: Dataset, count: int, kind: str, rng: np.random.Generator) -> Dataset:
    """Turn ``count`` randomly chosen full samples into ``kind`` samples."""
    full = [i for i, s in enumerate(ds.samples) if s.kind == FULL]
    if not 0 <= count <= len(full):
        raise ValueError(f"cannot convert {count} of {len(full)} full samples")
    chosen = set(rng.permutation(full)[:count].tolist())
    out = []
    for i, s in enumerate(ds.samples):
        if i in chosen:
            s = Sample(INPUT_ONLY, x=s.x) if kind == INPUT_ONLY else Sample(LABEL_ONLY, y=s.y)
        out.append(s)
    return replace(ds, samples=out)


def _n_converted(ds: Dataset, fraction: float) -> int:
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    return int(round(fraction * ds.counts()[FULL]))


def strip_labels(ds: Dataset, fraction: float, rng: np.random.Generator) -> Dataset:
    return convert(ds, _n_converted(ds, fraction), INPUT_ONLY, rng)


def strip_inputs(ds: Dataset, fraction: float, rng: np.random.Generator) -> Dataset:
    return convert(ds, _n_converted(ds, fraction), LABEL_ONLY, rng)


def random_split(ds: Dataset, n_valid: int, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Move ``n_valid`` random full samples into a validation set."""
    full = [i for i, s in enumerate(ds.samples) if s.kind == FULL]
    if n_valid > len(full):
        raise DataError(f"asked for {n_valid} validation samples, only {len(full)} labeled")
    valid = sorted(rng.permutation(full)[:n_valid].tolist())
    vset = set(valid)
    train = [i for i in range(len(ds)) if i not in vset]
    return ds.subset(train), ds.subset(valid)


# -- file formats ------------------------------------------------------------

def load_pts(path) -> np.ndarray:
    """Point annotation file to an interleaved (2N,) vector of pixel coordinates."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    content = [(no, ln.strip()) for no, ln in enumerate(lines, 1) if ln.strip()]

    def fail(no, msg):
        raise DataError(f"{path}:{no}: {msg}")

    if len(content) < 3:
        fail(len(lines), "truncated header")
    no, ln = content[0]
    if not ln.startswith("version:"):
        fail(no, "expected 'version:' line")
    no, ln = content[1]
    key, _, val = ln.partition(":")
    if key.strip() != "n_points":
        fail(no, "expected 'n_points:' line")
    try:
        n = int(val)
    except ValueError:
        fail(no, f"bad point count {val.strip()!r}")
    if n < 1:
        fail(no, "point count must be positive")
    no, ln = content[2]
    if ln != "{":
        fail(no, "expected '{'")
    body = content[3:]
    coords = []
    for no, ln in body:
        if ln == "}":
            break
        parts = ln.split()
        if len(parts) != 2:
            fail(no, "expected two coordinates")
        try:
            coords.append((float(parts[0]), float(parts[1])))
        except ValueError:
            fail(no, "coordinates must be decimal numbers")
    else:
        fail(len(lines), "missing closing '}'")
    if len(coords) != n:
        fail(no, f"header declares {n} points, found {len(coords)}")
    return np.asarray(coords, dtype=np.float64).reshape(-1)


def save_pts(path, points) -> None:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    rows = "".join(f"{a!r} {b!r}\n" for a, b in p.tolist())
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"version: 1\nn_points: {len(p)}\n{{\n{rows}}}\n")


def _pgm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(buf):
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def load_image(path, expected_side: int | None = None) -> np.ndarray:
    """Binary 8-bit PGM to a flattened row-major vector in [0, 1]."""
    path = Path(path)
    buf = path.read_bytes()
    magic, pos = _pgm_token(buf, 0)
    if magic != b"P5":
        raise DataError(f"{path}: byte 0: not a binary PGM (magic {magic!r})")
    fields = []
    for what in ("width", "height", "maxval"):
        tok, pos = _pgm_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise DataError(f"{path}: byte {pos}: bad {what} {tok!r}") from None
    w, h, maxval = fields
    if not 0 < maxval < 256:
        raise DataError(f"{path}: byte {pos}: only 8-bit graymaps are supported")
    pos += 1  # single whitespace byte before the raster
    if expected_side is not None and (w, h) != (expected_side, expected_side):
        raise DataError(f"{path}: image is {w}x{h}, expected {expected_side}x{expected_side}")
    raster = buf[pos:pos + w * h]
    if len(raster) != w * h:
        raise DataError(f"{path}: byte {len(buf)}: raster truncated ({len(raster)} of {w * h} bytes)")
    return np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / maxval


def save_image(path, x, side: int) -> None:
    q = np.round(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    if q.size != side * side:
        raise DataError(f"image vector of length {q.size} is not {side}x{side}")
    with open(path, "wb") as f:
        f.write(f"P5\n{side} {side}\n255\n".encode("ascii"))
        f.write(q.tobytes())


MANIFEST = "manifest.tsv"
MANIFEST_HEADER = "kind\timage_path\tpts_path"


def save_dataset(ds: Dataset, root) -> None:
    if ds.img_side is None:
        raise DataError("dataset needs img_side to be written")
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "points").mkdir(parents=True, exist_ok=True)
    rows = [MANIFEST_HEADER]
    for i, s in enumerate(ds.samples):
        img = pts = ""
        if s.x is not None:
            img = f"images/{i:06d}.pgm"
            save_image(root / img, s.x, ds.img_side)
        if s.y is not None:
            pts = f"points/{i:06d}.pts"
            save_pts(root / pts, denormalize(s.y, ds.img_side))
        rows.append(f"{s.kind}\t{img}\t{pts}")
    with open(root / MANIFEST, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(rows) + "\n")


def load_dataset(root, img_side: int) -> Dataset:
    root = Path(root)
    mpath = root / MANIFEST
    if not mpath.is_file():
        raise DataError(f"{root}: no {MANIFEST}")
    lines = mpath.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise DataError(f"{mpath}:1: bad header")
    samples = []
    n_points = None
    for no, ln in enumerate(lines[1:], 2):
        if not ln:
            continue
        cols = ln.split("\t")
        if len(cols) != 3:
            raise DataError(f"{mpath}:{no}: expected 3 tab-separated columns")
        kind, img, pts = cols
        if kind not in KINDS:
            raise DataError(f"{mpath}:{no}: unknown kind {kind!r}")
        for rel in (img, pts):
            if rel and not (root / rel).is_file():
                raise DataError(f"{mpath}:{no}: missing file {rel}")
        x = load_image(root / img, img_side) if img else None
        y = None
        if pts:
            raw = load_pts(root / pts)
            if n_points is None:
                n_points = raw.size // 2
            elif raw.size != 2 * n_points:
                raise DataError(f"{root / pts}: has {raw.size // 2} points, expected {n_points}")
            try:
                y = normalize_landmarks(raw, img_side)
            except DataError as e:
                raise DataError(f"{root / pts}: {e}") from None
        try:
            samples.append(Sample(kind, x, y))
        except DataError as e:
            raise DataError(f"{mpath}:{no}: {e}") from None
    if n_points is None:
        raise DataError(f"{root}: dataset has no landmark files")
    ds = Dataset(samples, img_side * img_side, n_points, img_side=img_side)
    ds.validate()
    return ds


def dataset_digest(root) -> str:
    """Stable fingerprint of every file under a dataset directory."""
    import hashlib

    h = hashlib.sha256()
    for dirpath, _dirs, files in sorted(os.walk(root)):
        for name in sorted(files):
            p = Path(dirpath) / name
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
