"""Image container, file I/O, bilinear sampling, gradients, color normalization.

Coordinates follow raster convention: origin at the top-left corner,
x grows rightward (columns), y grows downward (rows). Pixel data is
stored row-major as float64; the nominal intensity scale is [0, 255]
but values are only required to be finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import EmptyOverlapError, ImageFormatError, OutOfBoundsError

GRAY_WEIGHTS = (0.299, 0.587, 0.114)

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True)
class Image:
    """A real-valued intensity grid with 1 or 3 channels.

    ``data`` has shape (height, width) for grayscale or
    (height, width, 3) for color, dtype float64.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise ValueError(f"image shape must be (h, w) or (h, w, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image intensities must be finite")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3


def load_image(path: str | Path) -> Image:
    """Load an 8-bit PNG or a binary PPM/PGM file.

    Raises ImageFormatError for anything else (including 16-bit PNG)
    and FileNotFoundError for a missing path.
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(_PNG_SIGNATURE):
        return _load_png(path, raw)
    if raw[:2] in (b"P5", b"P6"):
        return _load_pnm(path, raw)
    raise ImageFormatError(f"{path}: not a PNG or binary PPM/PGM file")


def _load_png(path: Path, raw: bytes) -> Image:
    if len(raw) < 26:
        raise ImageFormatError(f"{path}: truncated PNG header")
    bit_depth = raw[24]
    if bit_depth != 8:
        raise ImageFormatError(f"{path}: only 8-bit PNG supported, got bit depth {bit_depth}")
    try:
        with PILImage.open(path) as pil:
            pil.load()
            if pil.mode in ("RGBA", "P", "1", "LA"):
                pil = pil.convert("RGB" if pil.mode in ("RGBA", "P") else "L")
            if pil.mode not in ("L", "RGB"):
                raise ImageFormatError(f"{path}: unsupported PNG mode {pil.mode}")
            arr = np.asarray(pil, dtype=np.float64)
    except ImageFormatError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"{path}: corrupt PNG ({exc})") from exc
    return Image(arr)


def _load_pnm(path: Path, raw: bytes) -> Image:
    """Parse binary PGM (P5) or PPM (P6), maxval 255 only."""
    magic = raw[:2]
    channels = 1 if magic == b"P5" else 3
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(raw):
            raise ImageFormatError(f"{path}: truncated PNM header")
        c = raw[pos : pos + 1]
        if c == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        elif c.isdigit():
            start = pos
            while pos < len(raw) and raw[pos : pos + 1].isdigit():
                pos += 1
            fields.append(int(raw[start:pos]))
        else:
            raise ImageFormatError(f"{path}: bad character in PNM header")
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{path}: bad PNM dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    n = width * height * channels
    payload = raw[pos : pos + n]
    if len(payload) != n:
        raise ImageFormatError(f"{path}: PNM payload has {len(payload)} bytes, expected {n}")
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return Image(arr.reshape(shape))


def save_image(img: Image, path: str | Path) -> None:
    """Write as 8-bit PNG or binary PPM/PGM based on the file extension."""
    path = Path(path)
    arr = np.clip(np.rint(img.data), 0, 255).astype(np.uint8)
    ext = path.suffix.lower()
    if ext == ".png":
        PILImage.fromarray(arr).save(path, format="PNG")
    elif ext in (".pgm", ".ppm"):
        channels = img.channels
        if ext == ".pgm" and channels != 1:
            raise ImageFormatError(f"{path}: PGM requires a single channel")
        if ext == ".ppm" and channels != 3:
            raise ImageFormatError(f"{path}: PPM requires three channels")
        magic = b"P5" if channels == 1 else b"P6"
        header = magic + f"\n{img.width} {img.height}\n255\n".encode()
        path.write_bytes(header + arr.tobytes())
    else:
        raise ImageFormatError(f"{path}: unsupported output extension {ext!r}")


def to_grayscale(img: Image) -> Image:
    """Collapse to one channel with luma weights 0.299/0.587/0.114."""
    if img.channels == 1:
        return img
    w = np.asarray(GRAY_WEIGHTS)
    return Image(img.data @ w)


def sample_bilinear(img: Image, p) -> float:
    """Bilinear sample of a single-channel image at real-valued point p = (x, y).

    Exact at integer coordinates. Raises OutOfBoundsError when p lies
    outside [0, width-1] x [0, height-1].
    """
    if img.channels != 1:
        raise ValueError("sample_bilinear expects a single-channel image")
    x, y = float(p[0]), float(p[1])
    h, w = img.data.shape
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        raise OutOfBoundsError(f"point ({x}, {y}) outside [0, {w - 1}] x [0, {h - 1}]")
    vals, _ = sample_bilinear_many(img.data, np.array([x]), np.array([y]))
    return float(vals[0])


def sample_bilinear_many(data: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Vectorized bilinear sampling with validity mask.

    ``data`` is a (h, w) or (h, w, c) array; returns (values, valid)
    where values is 0 wherever valid is False. Points on the exact
    boundary [0, w-1] x [0, h-1] are valid.
    """
    h, w = data.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    valid = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)

    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.intp), w - 2) if w > 1 else np.zeros_like(xc, dtype=np.intp)
    y0 = np.minimum(np.floor(yc).astype(np.intp), h - 2) if h > 1 else np.zeros_like(yc, dtype=np.intp)
    fx = xc - x0
    fy = yc - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)

    if data.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    v00 = data[y0, x0]
    v10 = data[y0, x1]
    v01 = data[y1, x0]
    v11 = data[y1, x1]
    top = v00 * (1 - fx) + v10 * fx
    bot = v01 * (1 - fx) + v11 * fx
    vals = top * (1 - fy) + bot * fy
    if data.ndim == 3:
        vals = np.where(valid[..., None], vals, 0.0)
    else:
        vals = np.where(valid, vals, 0.0)
    return vals, valid


def gradient(img: Image):
    """Finite-difference intensity gradients (gx, gy) of a single-channel image.

    Central differences in the interior, one-sided at the borders;
    units are intensity per pixel.
    """
    if img.channels != 1:
        raise ValueError("gradient expects a single-channel image")
    if img.width < 3 or img.height < 3:
        raise ValueError("image must be at least 3x3 for gradients")
    gy, gx = np.gradient(img.data)
    return gx, gy


def overlap_affine(src: np.ndarray, dst: np.ndarray, mask: np.ndarray):
    """Per-channel (gain, bias) mapping src's overlap statistics onto dst's.

    Falls back to a pure mean shift for zero-variance channels.
    """
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyOverlapError("overlap mask is empty")
    src3 = src[..., None] if src.ndim == 2 else src
    dst3 = dst[..., None] if dst.ndim == 2 else dst
    gains = np.empty(src3.shape[2])
    biases = np.empty(src3.shape[2])
    for c in range(src3.shape[2]):
        s, d = src3[..., c][m], dst3[..., c][m]
        ms, md = s.mean(), d.mean()
        ss, sd = s.std(), d.std()
        if ss < 1e-12:
            gains[c] = 1.0
            biases[c] = md - ms
        else:
            gains[c] = sd / ss
            biases[c] = md - (sd / ss) * ms
    return gains, biases


def normalize_colors(src: Image, dst: Image, overlap_mask: np.ndarray):
    """Affinely remap src per channel so its overlap mean/std match dst's.

    Both images must live on a common canvas; dst is returned unchanged.
    """
    if src.data.shape != dst.data.shape:
        raise ValueError("normalize_colors requires images on a common canvas")
    gains, biases = overlap_affine(src.data, dst.data, overlap_mask)
    if src.channels == 1:
        remapped = src.data * gains[0] + biases[0]
    else:
        remapped = src.data * gains[None, None, :] + biases[None, None, :]
    return Image(remapped), dst
