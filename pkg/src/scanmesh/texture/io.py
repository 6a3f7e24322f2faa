"""Atlas image I/O: 8-bit or 16-bit RGB PNG plus the sidecar validity mask.

Pillow handles the 8-bit path; 16-bit RGB PNGs are written/read directly
(PNG is simple enough: IHDR + zlib IDAT + IEND) since PIL has no 16-bit
RGB mode.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np
from PIL import Image

from .raster import TextureAtlas

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (struct.pack(">I", len(payload)) + tag + payload
            + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF))


def _write_png16(path: str, rgb16: np.ndarray):
    h, w, _ = rgb16.shape
    ihdr = struct.pack(">IIBBBBB", w, h, 16, 2, 0, 0, 0)  # 16-bit truecolor
    raw = rgb16.astype(">u2").tobytes()
    stride = w * 6
    body = b"".join(b"\x00" + raw[y * stride:(y + 1) * stride]
                    for y in range(h))
    with open(path, "wb") as f:
        f.write(_PNG_SIG)
        f.write(_chunk(b"IHDR", ihdr))
        f.write(_chunk(b"IDAT", zlib.compress(body, 6)))
        f.write(_chunk(b"IEND", b""))


def _read_png16(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    assert data[:8] == _PNG_SIG, "not a PNG"
    pos = 8
    w = h = bits = color = None
    idat = b""
    while pos < len(data):
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        tag = data[pos + 4:pos + 8]
        payload = data[pos + 8:pos + 8 + length]
        if tag == b"IHDR":
            w, h, bits, color = struct.unpack(">IIBB", payload[:10])
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
        pos += 12 + length
    if bits != 16 or color != 2:
        raise ValueError("expected 16-bit truecolor PNG")
    raw = zlib.decompress(idat)
    stride = w * 6
    rows = []
    for y in range(h):
        line = raw[y * (stride + 1):(y + 1) * (stride + 1)]
        if line[0] != 0:
            raise ValueError("only filter type 0 supported")
        rows.append(np.frombuffer(line[1:], dtype=">u2"))
    return np.stack(rows).reshape(h, w, 3).astype(np.uint16)


def save_atlas(atlas: TextureAtlas, image_path: str,
               mask_path: str | None = None, bits: int = 8):
    """Writes the texel grid as PNG (8- or 16-bit) and optionally the valid
    mask as an 8-bit sidecar."""
    tex = np.clip(atlas.texels, 0.0, 1.0)
    if bits == 8:
        Image.fromarray((tex * 255 + 0.5).astype(np.uint8)).save(image_path)
    elif bits == 16:
        _write_png16(image_path, (tex * 65535 + 0.5).astype(np.uint16))
    else:
        raise ValueError("bits must be 8 or 16")
    if mask_path is not None:
        Image.fromarray((atlas.valid * 255).astype(np.uint8)).save(mask_path)


def load_atlas(image_path: str, mask_path: str | None = None) -> TextureAtlas:
    with open(image_path, "rb") as f:
        head = f.read(26)
    bit_depth = head[24]
    if bit_depth == 16:
        tex = _read_png16(image_path).astype(np.float64) / 65535.0
    else:
        tex = np.asarray(Image.open(image_path), dtype=np.float64) / 255.0
    if mask_path is not None:
        valid = np.asarray(Image.open(mask_path)) > 127
    else:
        valid = np.ones(tex.shape[:2], dtype=bool)
    return TextureAtlas(texels=tex, valid=valid)
