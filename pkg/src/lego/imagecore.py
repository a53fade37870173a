"""Images, the DCT latent basis, and on-disk tensor formats.

Images are plain ``numpy`` arrays of shape ``(H, W)`` (or ``(n, H, W)`` for
stacks). Latent vectors are arrays whose last axis has length ``basis.d``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError

MIN_SIDE = 8
TENSOR_MAGIC = b"LGT1"


def as_image(pixels, min_side=MIN_SIDE) -> np.ndarray:
    """Validate and return a float64 ``(H, W)`` image."""
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"image must be 2-D, got shape {img.shape}")
    if min(img.shape) < min_side:
        raise DimensionError(f"image sides must be >= {min_side}, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite intensities")
    return img


def _dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    c = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    c[0] = np.sqrt(1.0 / n)
    return c


def zigzag_order(height: int, width: int) -> list[tuple[int, int]]:
    """JPEG-style zigzag traversal of a ``height x width`` frequency grid."""
    order = []
    for s in range(height + width - 1):
        rows = range(max(0, s - width + 1), min(s, height - 1) + 1)
        rows = list(rows) if s % 2 else list(rows)[::-1]
        order.extend((r, s - r) for r in rows)
    return order


@dataclass(frozen=True)
class Basis:
    """Truncated orthonormal 2-D DCT-II basis.

    ``rows`` has shape ``(d, height*width)``; row ``k`` is the ``k``-th basis
    image in zigzag frequency order, flattened row-major.
    """

    height: int
    width: int
    rows: np.ndarray
    freqs: tuple[tuple[int, int], ...]

    @property
    def d(self) -> int:
        return self.rows.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def build_dct_basis(height: int, width: int, d: int) -> Basis:
    if d > height * width:
        raise DimensionError(f"latent dimension {d} exceeds pixel count {height * width}")
    if d < 1:
        raise DimensionError("latent dimension must be positive")
    ch, cw = _dct_matrix(height), _dct_matrix(width)
    freqs = tuple(zigzag_order(height, width)[:d])
    rows = np.stack([np.outer(ch[u], cw[v]).ravel() for u, v in freqs])
    rows.setflags(write=False)
    return Basis(height, width, rows, freqs)


def encode(img, basis: Basis) -> np.ndarray:
    """Project images ``(..., H, W)`` onto the basis; returns ``(..., d)``."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[-2:] != basis.shape:
        raise DimensionError(f"image shape {img.shape[-2:]} does not match basis {basis.shape}")
    flat = img.reshape(img.shape[:-2] + (basis.height * basis.width,))
    return flat @ basis.rows.T


def decode(z, basis: Basis) -> np.ndarray:
    """Synthesize images from coefficients ``(..., d)``. No clamping."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != basis.d:
        raise DimensionError(f"latent length {z.shape[-1]} does not match basis d={basis.d}")
    flat = z @ basis.rows
    return flat.reshape(z.shape[:-1] + basis.shape)


def project(img, basis: Basis) -> np.ndarray:
    """Orthogonal projection of images onto the basis span."""
    return decode(encode(img, basis), basis)


# -- tensor files ---------------------------------------------------------

def save_tensor(path, dims, data) -> None:
    """Write ``LGT1`` tensor: magic, u32 ndim, u32 dims, f32 payload (all LE)."""
    dims = [int(x) for x in dims]
    values = np.asarray(data).ravel()
    if values.size != int(np.prod(dims, dtype=np.int64)):
        raise DimensionError(f"payload has {values.size} values, dims {dims} need {int(np.prod(dims))}")
    if any(x < 0 or x >= 2**32 for x in dims):
        raise DimensionError(f"dims out of u32 range: {dims}")
    header = TENSOR_MAGIC + struct.pack(f"<I{len(dims)}I", len(dims), *dims)
    Path(path).write_bytes(header + values.astype("<f4").tobytes())


def load_tensor(path) -> tuple[list[int], np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    end = 8 + 4 * ndim
    if len(raw) < end:
        raise FormatError(f"{path}: truncated dims")
    dims = list(struct.unpack_from(f"<{ndim}I", raw, 8))
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - end != 4 * count:
        raise FormatError(f"{path}: payload is {len(raw) - end} bytes, dims {dims} need {4 * count}")
    data = np.frombuffer(raw, dtype="<f4", offset=end, count=count).copy()
    return dims, data


def save_array(path, arr) -> None:
    arr = np.asarray(arr)
    save_tensor(path, arr.shape, arr)


def load_array(path) -> np.ndarray:
    """Load a tensor file as a float64 array of its stored shape."""
    dims, data = load_tensor(path)
    return data.astype(np.float64).reshape(dims)


def to_bytes_255(img) -> np.ndarray:
    """Clamp to [0, 1] and quantize with round-half-away-from-zero."""
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(x + 0.5).astype(np.uint8)


def save_pgm(path, img, binary=True) -> None:
    q = to_bytes_255(as_image(img, min_side=1))
    h, w = q.shape
    if binary:
        Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + q.tobytes())
    else:
        lines = [" ".join(str(v) for v in row) for row in q]
        Path(path).write_text(f"P2\n{w} {h}\n255\n" + "\n".join(lines) + "\n")


def load_pgm(path) -> np.ndarray:
    """Read a P2/P5 PGM (maxval 255) into [0, 1] intensities."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode())
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    if magic == "P5":
        body = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    elif magic == "P2":
        body = np.array(raw[pos:].split(), dtype=np.int64)
    else:
        raise FormatError(f"{path}: unsupported PGM magic {magic}")
    if body.size != w * h:
        raise FormatError(f"{path}: expected {w * h} samples, found {body.size}")
    return body.reshape(h, w).astype(np.float64) / 255.0
