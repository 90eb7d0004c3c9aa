"""Image containers, mask representation, file I/O, tiling, and resampling.

Coordinate convention used across the package: the image domain is the
rectangle [0, width] x [0, height]; pixel (ix, iy) occupies the unit square
with corners (ix, iy) and (ix+1, iy+1), so its center sits at
(ix + 0.5, iy + 0.5). Arrays are indexed [row, col] = [iy, ix].
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_FLAT = "flat-binary"
FORMAT_PGM16 = "portable-gray-16"
FORMAT_FITS = "fits-like"
FORMATS = (FORMAT_FLAT, FORMAT_PGM16, FORMAT_FITS)

_TRSC_MAGIC = b"TRSC"
# dtype tags of the flat-binary container (see save_raster docstring)
_TRSC_DTYPES = {1: np.dtype("<u2"), 2: np.dtype("<f4"), 3: np.dtype("<f8")}
_TRSC_TAGS = {"uint16": 1, "float32": 2, "float64": 3}

_FITS_BLOCK = 2880
_FITS_BITPIX = {8: ">u1", 16: ">i2", 32: ">i4", -32: ">f4", -64: ">f8"}


class FormatError(ValueError):
    """A raster file is malformed or a value does not fit the target format."""


@dataclass(frozen=True, eq=False)
class Raster:
    """A 2-D intensity image in electrons, immutable once constructed."""

    pixels: np.ndarray
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        px = np.ascontiguousarray(np.asarray(self.pixels, dtype=np.float32))
        if px.ndim != 2 or px.size == 0:
            raise ValueError("pixels must be a non-empty 2-D array")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixels must be finite")
        if px.min() < 0:
            raise ValueError("pixels must be >= 0")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Per-pixel boolean annotation matching a raster's dimensions."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.ascontiguousarray(np.asarray(self.bits, dtype=bool))
        if b.ndim != 2 or b.size == 0:
            raise ValueError("bits must be a non-empty 2-D array")
        b.flags.writeable = False
        object.__setattr__(self, "bits", b)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class TileGrid:
    """Overlapping tile boxes (x0, y0, x1, y1) covering a parent frame."""

    rows: int
    cols: int
    overlap_fraction: float
    tile_boxes: tuple[tuple[int, int, int, int], ...]

    @property
    def frame_width(self) -> int:
        return max(b[2] for b in self.tile_boxes)

    @property
    def frame_height(self) -> int:
        return max(b[3] for b in self.tile_boxes)


def _axis_intervals(length: int, n: int, overlap: float) -> list[tuple[int, int]]:
    """Split [0, length) into n equal intervals overlapping by >= overlap*side."""
    if n == 1:
        return [(0, length)]
    side = min(length, math.ceil(length * (1.0 + overlap) / n))
    while True:
        if length - side < n - 1:
            raise ValueError(
                f"cannot cover length {length} with {n} distinct tiles at overlap {overlap}"
            )
        # origins evenly spread with both ends pinned; round half up for determinism
        origins = [int(math.floor(i * (length - side) / (n - 1) + 0.5)) for i in range(n)]
        if all(side - (b - a) >= overlap * side for a, b in zip(origins, origins[1:])):
            return [(o, o + side) for o in origins]
        side += 1  # integer spreading undershot the overlap; widen and retry


def make_tile_grid(
    frame_w: int, frame_h: int, rows: int, cols: int, overlap_fraction: float
) -> TileGrid:
    """Build a rows x cols grid of equal overlapping tiles covering the frame.

    Tile side is ceil(frame_side * (1 + overlap) / n) per axis; origins are
    evenly spread with the first tile pinned at 0 and the last at the frame
    edge, so the union covers every pixel and corners belong to exactly one
    tile. Raises ValueError when the requested overlap cannot be achieved
    while covering the frame.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    if not (0.0 <= overlap_fraction < 0.5):
        raise ValueError("overlap_fraction must be in [0, 0.5)")
    if frame_w < 1 or frame_h < 1:
        raise ValueError("frame dimensions must be positive")
    xs = _axis_intervals(frame_w, cols, overlap_fraction)
    ys = _axis_intervals(frame_h, rows, overlap_fraction)
    boxes = tuple((x0, y0, x1, y1) for (y0, y1) in ys for (x0, x1) in xs)
    return TileGrid(rows=rows, cols=cols, overlap_fraction=overlap_fraction, tile_boxes=boxes)


def _overlap_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix mapping n_in cells to n_out area-weighted means."""
    s = n_in / n_out
    m = np.zeros((n_out, n_in))
    for j in range(n_out):
        a, b = j * s, (j + 1) * s
        i0 = max(0, int(math.floor(a)))
        i1 = min(n_in, int(math.ceil(b)))
        for i in range(i0, i1):
            w = min(b, i + 1) - max(a, i)
            if w > 0:
                m[j, i] = w
        m[j] /= m[j].sum()
    return m


def resample(img: Raster, out_w: int, out_h: int) -> Raster:
    """Area-weighted (box filter) resample to out_w x out_h.

    The output pixel is the mean of the source area it covers, so constant
    images are preserved and flux per unit source area is conserved.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    if out_w == img.width and out_h == img.height:
        return Raster(img.pixels.copy(), dict(img.meta))
    rows = _overlap_matrix(img.height, out_h)
    cols = _overlap_matrix(img.width, out_w)
    out = rows @ img.pixels.astype(np.float64) @ cols.T
    return Raster(np.maximum(out, 0.0).astype(np.float32), dict(img.meta))


# ---------------------------------------------------------------------------
# flat-binary container: 16-byte header (magic "TRSC", u32 width, u32 height,
# u32 dtype tag), little-endian, then row-major payload.
# dtype tags: 1 = uint16, 2 = float32, 3 = float64.
# ---------------------------------------------------------------------------


def _save_flat(img: Raster, path: Path, dtype: str) -> None:
    tag = _TRSC_TAGS.get(dtype)
    if tag is None:
        raise FormatError(f"unsupported flat-binary dtype {dtype!r}")
    np_dtype = _TRSC_DTYPES[tag]
    data = img.pixels
    if dtype == "uint16":
        if data.max() > 65535:
            raise FormatError("intensity exceeds uint16 range")
        payload = np.round(data).astype(np_dtype)
    else:
        payload = data.astype(np_dtype)
    header = _TRSC_MAGIC + struct.pack("<III", img.width, img.height, tag)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def _load_flat(path: Path) -> Raster:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != _TRSC_MAGIC:
        raise FormatError(f"{path}: not a TRSC flat-binary file")
    width, height, tag = struct.unpack("<III", raw[4:16])
    np_dtype = _TRSC_DTYPES.get(tag)
    if np_dtype is None:
        raise FormatError(f"{path}: unknown dtype tag {tag}")
    expect = 16 + width * height * np_dtype.itemsize
    if len(raw) != expect:
        raise FormatError(f"{path}: payload size {len(raw)} != header implies {expect}")
    data = np.frombuffer(raw, dtype=np_dtype, offset=16).reshape(height, width)
    return Raster(data.astype(np.float32))


# ---------------------------------------------------------------------------
# portable-gray-16: binary PGM (P5) with maxval 65535, big-endian samples per
# the PNM standard. Metadata is carried in '#key=value' comment lines.
# ---------------------------------------------------------------------------


def _save_pgm16(img: Raster, path: Path) -> None:
    data = img.pixels
    if data.max() > 65535:
        raise FormatError("intensity exceeds 16-bit PGM range")
    lines = ["P5"]
    for k, v in img.meta.items():
        if "\n" not in k and "\n" not in v:
            lines.append(f"#{k}={v}")
    lines.append(f"{img.width} {img.height}")
    lines.append("65535")
    header = ("\n".join(lines) + "\n").encode("ascii")
    payload = np.round(data).astype(">u2").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def _load_pgm16(path: Path) -> Raster:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM file")
    meta: dict[str, str] = {}
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(raw):
            raise FormatError(f"{path}: truncated PGM header")
        ch = raw[pos : pos + 1]
        if ch == b"#":
            end = raw.index(b"\n", pos)
            comment = raw[pos + 1 : end].decode("ascii", "replace")
            if "=" in comment:
                k, v = comment.split("=", 1)
                meta[k.strip()] = v.strip()
            pos = end + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end : end + 1].isspace():
                end += 1
            tokens.append(int(raw[pos:end]))
            pos = end
    pos += 1  # single whitespace after maxval
    width, height, maxval = tokens
    if maxval != 65535:
        raise FormatError(f"{path}: expected 16-bit PGM (maxval 65535), got {maxval}")
    expect = width * height * 2
    if len(raw) - pos != expect:
        raise FormatError(f"{path}: payload size {len(raw) - pos} != {expect}")
    data = np.frombuffer(raw, dtype=">u2", offset=pos).reshape(height, width)
    return Raster(data.astype(np.float32), meta)


# ---------------------------------------------------------------------------
# fits-like: minimal single-HDU reader/writer. 2880-byte header of 80-char
# cards (SIMPLE, BITPIX, NAXIS=2, NAXIS1, NAXIS2, optional BSCALE/BZERO,
# metadata string cards, END), big-endian payload padded to 2880 bytes.
# Not a general FITS implementation; no extensions, no WCS.
# ---------------------------------------------------------------------------


def _fits_card(key: str, value: str) -> str:
    return f"{key:<8}= {value:>20}".ljust(80)


def _save_fits(img: Raster, path: Path) -> None:
    cards = [
        _fits_card("SIMPLE", "T"),
        _fits_card("BITPIX", "-32"),
        _fits_card("NAXIS", "2"),
        _fits_card("NAXIS1", str(img.width)),
        _fits_card("NAXIS2", str(img.height)),
    ]
    for k, v in img.meta.items():
        key = "".join(c for c in k.upper() if c.isalnum() or c in "-_")[:8]
        if not key or key in ("SIMPLE", "BITPIX", "NAXIS", "NAXIS1", "NAXIS2", "END"):
            continue
        sval = v.replace("'", "''")[:65]
        cards.append(_fits_card(key, f"'{sval}'"))
    cards.append("END".ljust(80))
    header = "".join(cards).encode("ascii")
    header += b" " * (-len(header) % _FITS_BLOCK)
    payload = img.pixels.astype(">f4").tobytes()
    payload += b"\x00" * (-len(payload) % _FITS_BLOCK)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def _parse_fits_value(text: str):
    text = text.split(" /")[0].strip()
    if text.startswith("'"):
        return text[1:].rstrip().rstrip("'").replace("''", "'")
    if text in ("T", "F"):
        return text == "T"
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            return text


def _load_fits(path: Path) -> Raster:
    raw = Path(path).read_bytes()
    if len(raw) < _FITS_BLOCK or not raw.startswith(b"SIMPLE"):
        raise FormatError(f"{path}: not a FITS-like file")
    header: dict[str, object] = {}
    meta: dict[str, str] = {}
    pos = 0
    done = False
    while not done:
        block = raw[pos : pos + _FITS_BLOCK]
        if len(block) < _FITS_BLOCK:
            raise FormatError(f"{path}: truncated header")
        for i in range(0, _FITS_BLOCK, 80):
            card = block[i : i + 80].decode("ascii", "replace")
            key = card[:8].strip()
            if key == "END":
                done = True
                break
            if card[8:10] != "= " or not key:
                continue
            value = _parse_fits_value(card[10:])
            header[key] = value
            if key not in ("SIMPLE", "BITPIX", "NAXIS", "NAXIS1", "NAXIS2", "BSCALE", "BZERO"):
                meta[key] = str(value)
        pos += _FITS_BLOCK
    bitpix = header.get("BITPIX")
    dtype = _FITS_BITPIX.get(bitpix)  # type: ignore[arg-type]
    if dtype is None:
        raise FormatError(f"{path}: unsupported BITPIX {bitpix!r}")
    if header.get("NAXIS") != 2:
        raise FormatError(f"{path}: only NAXIS=2 supported")
    width, height = int(header["NAXIS1"]), int(header["NAXIS2"])  # type: ignore[arg-type]
    count = width * height
    data = np.frombuffer(raw, dtype=dtype, offset=pos, count=-1)
    if data.size < count:
        raise FormatError(f"{path}: payload has {data.size} samples, header implies {count}")
    data = data[:count].astype(np.float64).reshape(height, width)
    scale = float(header.get("BSCALE", 1.0))  # type: ignore[arg-type]
    zero = float(header.get("BZERO", 0.0))  # type: ignore[arg-type]
    if scale != 1.0 or zero != 0.0:
        data = data * scale + zero
    return Raster(data.astype(np.float32), meta)


def load_raster(path, format: str) -> Raster:
    """Load a raster from `path` in the declared format.

    Raises FormatError on malformed input and ValueError when the decoded
    pixels violate the Raster invariants (negative or non-finite values).
    """
    path = Path(path)
    if format == FORMAT_FLAT:
        return _load_flat(path)
    if format == FORMAT_PGM16:
        return _load_pgm16(path)
    if format == FORMAT_FITS:
        return _load_fits(path)
    raise ValueError(f"unknown raster format {format!r}")


def save_raster(img: Raster, path, format: str, flat_dtype: str = "float32") -> None:
    """Write `img` to `path` in the given format.

    flat-binary keeps float32 exactly (or uint16/float64 via flat_dtype);
    portable-gray-16 and integer flat-binary quantize to the nearest integer
    and reject intensities outside the representable range.
    """
    path = Path(path)
    if format == FORMAT_FLAT:
        _save_flat(img, path, flat_dtype)
    elif format == FORMAT_PGM16:
        _save_pgm16(img, path)
    elif format == FORMAT_FITS:
        _save_fits(img, path)
    else:
        raise ValueError(f"unknown raster format {format!r}")
