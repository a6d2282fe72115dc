"""Image codec, resizing, dataset splits and a synthetic shape dataset.

The only raster formats are binary PGM (P5) and PPM (P6) with maxval 255:
both are bit-exact, header-only formats that keep the repository free of
external decoders. Tensors are NCHW floats in [0, 1]; masks are binary
single-channel tensors of the same spatial size as their image.
"""

import os
import tempfile
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .dtypes import asdtype, dtype
from .errors import (
    BadMagicError,
    DatasetError,
    ImageFormatError,
    SpecError,
    TruncatedImageError,
    UnsupportedMaxvalError,
)

MANIFEST_NAME = "manifest.txt"


# ---------------------------------------------------------------------------
# PGM / PPM codec


def _read_header_tokens(buf: bytes, count: int):
    """Read `count` whitespace-separated tokens after the magic, skipping
    '#' comments, and return (tokens, offset_past_single_whitespace)."""
    tokens = []
    i = 2  # past the 2-byte magic
    n = len(buf)
    while len(tokens) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i] == ord("#"):
            while i < n and buf[i] != ord("\n"):
                i += 1
            continue
        start = i
        while i < n and not buf[i : i + 1].isspace():
            i += 1
        if i == start:
            raise TruncatedImageError("header ended before width/height/maxval")
        tokens.append(buf[start:i])
    # exactly one whitespace byte separates the maxval from the raster
    if i >= n:
        raise TruncatedImageError("no raster data after header")
    try:
        values = [int(t) for t in tokens]
    except ValueError:
        raise ImageFormatError(f"non-numeric header token in {tokens!r}") from None
    return values, i + 1


def decode_netpbm(buf: bytes) -> np.ndarray:
    """Decode P5/P6 bytes into a (1, c, h, w) float tensor scaled to [0, 1]."""
    magic = buf[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise BadMagicError(f"not a binary PGM/PPM file (magic {magic!r})")
    (w, h, maxval), offset = _read_header_tokens(buf, 3)
    if maxval != 255:
        raise UnsupportedMaxvalError(f"maxval must be 255, got {maxval}")
    if w < 1 or h < 1:
        raise TruncatedImageError(f"bad raster dimensions {w}x{h}")
    need = w * h * channels
    raster = buf[offset : offset + need]
    if len(raster) < need:
        raise TruncatedImageError(
            f"raster holds {len(raster)} bytes, {w}x{h}x{channels} needs {need}"
        )
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, channels)
    planes = arr.transpose(2, 0, 1)[None, ...]
    return (planes.astype(dtype()) / np.asarray(255, dtype=dtype())).astype(dtype())


def encode_netpbm(t: np.ndarray) -> bytes:
    """Encode a (1, 1|3, h, w) tensor as P5/P6 bytes, quantizing by
    round(255 * clamp(x, 0, 1))."""
    if t.ndim != 4 or t.shape[0] != 1 or t.shape[1] not in (1, 3):
        raise SpecError(f"encodable tensors are (1, 1|3, h, w), got {t.shape}")
    _, c, h, w = t.shape
    q = np.rint(255.0 * np.clip(t[0], 0.0, 1.0)).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    return header + q.transpose(1, 2, 0).tobytes()


def load_image(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_netpbm(f.read())


def save_image(t: np.ndarray, path) -> None:
    data = encode_netpbm(t)
    with open(path, "wb") as f:
        f.write(data)


# ---------------------------------------------------------------------------
# Resizing


def _axis_coords(out_size: int, in_size: int):
    """Half-pixel source coordinates: lo/hi indices and hi-side weights."""
    centers = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    centers = np.clip(centers, 0.0, in_size - 1.0)
    lo = np.floor(centers).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = centers - lo
    return lo, hi, frac


def resize_bilinear(t: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers (align_corners false)."""
    if out_h < 1 or out_w < 1:
        raise SpecError(f"resize target must be positive, got {out_h}x{out_w}")
    b, c, h, w = t.shape
    if (h, w) == (out_h, out_w):
        return t.copy()
    i0, i1, fy = _axis_coords(out_h, h)
    j0, j1, fx = _axis_coords(out_w, w)
    fy = fy.astype(t.dtype)[:, None]
    fx = fx.astype(t.dtype)[None, :]
    one = np.asarray(1, dtype=t.dtype)
    top = (one - fx) * t[:, :, i0[:, None], j0[None, :]] + fx * t[:, :, i0[:, None], j1[None, :]]
    bot = (one - fx) * t[:, :, i1[:, None], j0[None, :]] + fx * t[:, :, i1[:, None], j1[None, :]]
    return (one - fy) * top + fy * bot


def resize_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a binary mask bilinearly, then re-binarize at 0.5."""
    soft = resize_bilinear(mask, out_h, out_w)
    return (soft >= 0.5).astype(mask.dtype)


# ---------------------------------------------------------------------------
# Samples and splits


@dataclass
class Sample:
    """One segmentation example: (1, c, h, w) image, (1, 1, h, w) binary mask."""

    id: str
    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.image.shape[2:] != self.mask.shape[2:]:
            raise SpecError(
                f"sample {self.id!r}: image {self.image.shape[2:]} and "
                f"mask {self.mask.shape[2:]} spatial dims differ"
            )


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise SpecError(f"fractions must be three non-negative values, {self.fractions!r}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise SpecError(f"fractions must sum to 1, got {sum(self.fractions)!r}")


def split_sizes(total: int, fractions) -> tuple[int, int, int]:
    """Apportion `total` into three parts by largest remainder.

    Each part starts at floor(total * fraction); leftover units go to the
    largest fractional remainders, ties resolved train > val > test.
    """
    quotas = [Fraction(f).limit_denominator(10**9) * total for f in fractions]
    sizes = [int(q) for q in quotas]
    order = sorted(range(3), key=lambda i: (quotas[i] - sizes[i], -i), reverse=True)
    for i in range(total - sum(sizes)):
        sizes[order[i % 3]] += 1
    return tuple(sizes)


def split_dataset(ids, spec: SplitSpec = SplitSpec()):
    """Partition ids into (train, val, test) by seeded shuffle + slicing."""
    ids = list(ids)
    if not ids:
        raise DatasetError("cannot split an empty id list")
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    perm = rng.permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    n_train, n_val, n_test = split_sizes(len(ids), spec.fractions)
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )


# ---------------------------------------------------------------------------
# Synthetic shapes


def _coverage_grid(h: int, w: int, factor: int = 2):
    """Pixel-center coordinates of a factor x factor supersampled grid."""
    ys = (np.arange(h * factor, dtype=np.float64) + 0.5) / factor
    xs = (np.arange(w * factor, dtype=np.float64) + 0.5) / factor
    return ys[:, None], xs[None, :]


def _downsample(cover: np.ndarray, factor: int) -> np.ndarray:
    h, w = cover.shape
    return cover.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def _draw_shapes(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Supersampled coverage in [0,1] of 1-3 random ellipses/rectangles."""
    factor = 2
    ys, xs = _coverage_grid(h, w, factor)
    inside = np.zeros((h * factor, w * factor), dtype=bool)
    scale = min(h, w)
    for _ in range(int(rng.integers(1, 4))):
        cy = rng.uniform(0.25, 0.75) * h
        cx = rng.uniform(0.25, 0.75) * w
        ry = rng.uniform(0.12, 0.32) * scale
        rx = rng.uniform(0.12, 0.32) * scale
        if rng.random() < 0.5:
            theta = rng.uniform(0.0, np.pi)
            dy, dx = ys - cy, xs - cx
            u = np.cos(theta) * dx + np.sin(theta) * dy
            v = -np.sin(theta) * dx + np.cos(theta) * dy
            inside |= (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        else:
            inside |= (np.abs(ys - cy) <= ry) & (np.abs(xs - cx) <= rx)
    return _downsample(inside.astype(np.float64), factor)


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Low-frequency background: a few random 2-d cosine waves."""
    ys = np.arange(h, dtype=np.float64)[:, None] / h
    xs = np.arange(w, dtype=np.float64)[None, :] / w
    tex = np.zeros((h, w), dtype=np.float64)
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 3.0, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        tex += rng.uniform(0.02, 0.05) * np.cos(2.0 * np.pi * (fy * ys + fx * xs) + phase)
    return tex


def synth_shapes(count: int, h: int, w: int, seed: int = 0) -> list[Sample]:
    """Deterministic synthetic segmentation set: anti-aliased blobs on a
    textured background with sigma = 0.1 gaussian noise; every mask covers
    between 5% and 60% of the frame."""
    if h % 16 != 0 or w % 16 != 0:
        raise SpecError(f"synthetic frames must be multiples of 16, got {h}x{w}")
    if count < 1:
        raise SpecError(f"count must be positive, got {count}")
    samples = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        for _ in range(100):
            cover = _draw_shapes(rng, h, w)
            frac = float((cover >= 0.5).mean())
            if 0.05 <= frac <= 0.6:
                break
        else:  # pragma: no cover - vanishingly unlikely under the size ranges
            raise DatasetError(f"could not draw a 5-60% mask for sample {i}")
        mask = (cover >= 0.5).astype(np.float64)
        fg = rng.uniform(0.55, 0.85)
        bg = rng.uniform(0.15, 0.35)
        img = bg + (fg - bg) * cover + _texture(rng, h, w)
        img += rng.normal(0.0, 0.1, size=(h, w))
        img = np.clip(img, 0.0, 1.0)
        samples.append(
            Sample(
                id=f"synth-{i:05d}",
                image=asdtype(img[None, None]),
                mask=asdtype(mask[None, None]),
            )
        )
    return samples


# ---------------------------------------------------------------------------
# Dataset directories


def save_dataset(samples, root) -> None:
    """Write images/<id>.pgm|ppm, masks/<id>.pgm and a manifest of ids."""
    root = os.fspath(root)
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "masks"), exist_ok=True)
    for s in samples:
        ext = "pgm" if s.image.shape[1] == 1 else "ppm"
        save_image(s.image, os.path.join(root, "images", f"{s.id}.{ext}"))
        save_image(s.mask, os.path.join(root, "masks", f"{s.id}.pgm"))
    manifest = "".join(f"{s.id}\n" for s in samples)
    fd, tmp = tempfile.mkstemp(dir=root, prefix=MANIFEST_NAME)
    with os.fdopen(fd, "w") as f:
        f.write(manifest)
    os.replace(tmp, os.path.join(root, MANIFEST_NAME))


def load_dataset(root) -> list[Sample]:
    """Load every sample named by the manifest; masks re-binarize at 0.5."""
    root = os.fspath(root)
    manifest = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(manifest):
        raise DatasetError(f"no {MANIFEST_NAME} in {root}")
    with open(manifest) as f:
        ids = [line.strip() for line in f if line.strip()]
    if not ids:
        raise DatasetError(f"manifest in {root} lists no ids")
    samples = []
    for sid in ids:
        image = None
        for ext in ("pgm", "ppm"):
            path = os.path.join(root, "images", f"{sid}.{ext}")
            if os.path.exists(path):
                image = load_image(path)
                break
        if image is None:
            raise DatasetError(f"no image for id {sid!r} under {root}/images")
        mask_path = os.path.join(root, "masks", f"{sid}.pgm")
        if not os.path.exists(mask_path):
            raise DatasetError(f"no mask for id {sid!r} under {root}/masks")
        mask = (load_image(mask_path) >= 0.5).astype(dtype())
        samples.append(Sample(id=sid, image=image, mask=mask))
    return samples
