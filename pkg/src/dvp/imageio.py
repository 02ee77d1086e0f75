"""Portable graymap (P2/P5) and PNG ingestion, normalised to [0, 1]."""
from __future__ import annotations

import hashlib
import itertools
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    def __init__(self, message: str, path=None, offset: int | None = None):
        self.path, self.offset = path, offset
        where = f" at byte {offset}" if offset is not None else ""
        src = f"{path}: " if path is not None else ""
        super().__init__(f"{src}{message}{where}")


def _header_tokens(data: bytes, count: int, path):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last token.
    """
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        if i >= n:
            raise ImageFormatError("truncated header", path, i)
        start = i
        while i < n and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
            i += 1
        tokens.append((data[start:i], start))
    return tokens, i + 1


def decode_pgm(data: bytes, path=None) -> tuple[np.ndarray, int]:
    """Return (integer pixel array, maxval)."""
    if data[:2] not in (b"P2", b"P5"):
        raise ImageFormatError("not a P2/P5 graymap (bad magic)", path, 0)
    tokens, offset = _header_tokens(data, 4, path)
    magic = tokens[0][0]
    vals = []
    for tok, pos in tokens[1:]:
        try:
            vals.append(int(tok))
        except ValueError:
            raise ImageFormatError(f"malformed header field {tok!r}", path, pos) from None
    width, height, maxval = vals
    if width <= 0 or height <= 0:
        raise ImageFormatError("non-positive image dimensions", path, tokens[1][1])
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"maxval {maxval} out of range", path, tokens[3][1])
    count = width * height
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        payload = data[offset:offset + need]
        if len(payload) < need:
            raise ImageFormatError(f"truncated payload ({len(payload)} of {need} bytes)", path,
                                   offset + len(payload))
        pixels = np.frombuffer(payload, dtype=dtype).astype(np.int64)
        starts = offset + dtype.itemsize * np.arange(count)
    else:
        matches = list(itertools.islice(re.finditer(rb"\S+", data[offset - 1:]), count))
        if len(matches) < count:
            raise ImageFormatError(f"truncated payload ({len(matches)} of {count} samples)", path, len(data))
        starts = np.array([offset - 1 + m.start() for m in matches])
        try:
            pixels = np.array([int(m.group()) for m in matches], dtype=np.int64)
        except ValueError:
            bad = next(m for m in matches if not m.group().isdigit())
            raise ImageFormatError("non-integer sample in ASCII payload", path, offset - 1 + bad.start()) from None
    over = np.flatnonzero(pixels > maxval)
    if over.size:
        raise ImageFormatError(f"sample exceeds maxval {maxval}", path, int(starts[over[0]]))
    return pixels.reshape(height, width), maxval


def read_pgm(path) -> np.ndarray:
    path = Path(path)
    pixels, maxval = decode_pgm(path.read_bytes(), path)
    return pixels / float(maxval)


def quantize(image: np.ndarray, maxval: int = 255) -> np.ndarray:
    """Scale [0, 1] intensities to integers with round-half-even, clipped to range."""
    return np.clip(np.rint(np.asarray(image, np.float64) * maxval), 0, maxval).astype(np.int64)


def encode_pgm(image: np.ndarray, maxval: int = 255, ascii: bool = False) -> bytes:
    q = quantize(image, maxval)
    h, w = q.shape
    header = f"{'P2' if ascii else 'P5'}\n{w} {h}\n{maxval}\n".encode()
    if ascii:
        rows = "\n".join(" ".join(str(v) for v in row) for row in q)
        return header + rows.encode() + b"\n"
    dtype = ">u2" if maxval > 255 else "u1"
    return header + q.astype(dtype).tobytes()


def write_pgm(path, image: np.ndarray, maxval: int = 255, ascii: bool = False) -> None:
    Path(path).write_bytes(encode_pgm(image, maxval, ascii))


def read_png(path) -> np.ndarray:
    """Grayscale or RGB(A) PNG, 8 or 16 bit; RGB uses 0.299/0.587/0.114 luminance."""
    from PIL import Image

    with Image.open(path) as im:
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif mode == "I":
            # Pillow stores 16-bit grayscale PNGs as 32-bit "I"
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif mode == "L":
            arr = np.asarray(im, dtype=np.float64) / 255.0
        elif mode in ("RGB", "RGBA"):
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            arr = rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114
        elif mode in ("LA", "P", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        else:
            raise ImageFormatError(f"unsupported PNG mode {mode}", path)
    return arr


def write_png(path, image: np.ndarray, bits: int = 8) -> None:
    from PIL import Image

    if bits == 8:
        Image.fromarray(quantize(image, 255).astype(np.uint8)).save(path)
    elif bits == 16:
        Image.fromarray(quantize(image, 65535).astype(np.uint16)).save(path)
    else:
        raise ValueError("bits must be 8 or 16")


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        return read_png(path)
    return read_pgm(path)


def write_image(path, image: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        write_png(path, image)
    else:
        write_pgm(path, image)


IMAGE_SUFFIXES = (".pgm", ".png")


@dataclass
class DatasetManifest:
    root: Path
    files: list[str]
    shapes: list[tuple[int, int]]
    checksum: str

    def format(self) -> str:
        lines = [f"# root\t{self.root}", f"# checksum\t{self.checksum}", "file\theight\twidth"]
        lines += [f"{f}\t{h}\t{w}" for f, (h, w) in zip(self.files, self.shapes)]
        return "\n".join(lines) + "\n"


def scan_dataset(root) -> DatasetManifest:
    """Sorted manifest of the graymap/PNG files directly under ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    files = sorted(p.name for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    digest = hashlib.sha256()
    shapes = []
    for name in files:
        data = (root / name).read_bytes()
        digest.update(name.encode() + b"\0" + data)
        shapes.append(read_image(root / name).shape)
    return DatasetManifest(root, files, shapes, digest.hexdigest())


def load_dataset(root) -> tuple[DatasetManifest, list[np.ndarray]]:
    manifest = scan_dataset(root)
    images = [read_image(manifest.root / f) for f in manifest.files]
    return manifest, images
