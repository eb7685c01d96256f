"""Binary PGM (P5, maxval 255) and 16-bit PCM mono WAV readers/writers."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

_WS = b" \t\r\n"


def _pgm_tokens(data, path, count):
    """Read `count` header tokens after the magic; returns (tokens, offset)."""
    pos, tokens = 2, []
    while len(tokens) < count:
        while pos < len(data) and (data[pos] in _WS or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                nl = data.find(b"\n", pos)
                pos = len(data) if nl < 0 else nl + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos] not in _WS and data[pos] != ord("#"):
            pos += 1
        tok = data[start:pos]
        if not tok.isdigit():
            raise FormatError(f"bad PGM header token {tok[:16]!r}", path, start)
        tokens.append(int(tok))
    if pos >= len(data) or data[pos] not in _WS:
        raise FormatError("missing whitespace after PGM header", path, pos)
    return tokens, pos + 1


def decode_pgm(data, path=None):
    if data[:2] != b"P5":
        raise FormatError("not a binary PGM (missing P5 magic)", path, 0)
    (width, height, maxval), offset = _pgm_tokens(data, path, 3)
    if width < 1 or height < 1:
        raise FormatError(f"bad PGM size {width}x{height}", path, offset)
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}", path, offset)
    need = width * height
    if len(data) - offset < need:
        raise FormatError(f"truncated pixel data: need {need} bytes, have {len(data) - offset}", path, len(data))
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=offset).reshape(height, width).copy()


def encode_pgm(pixels):
    px = np.ascontiguousarray(pixels, dtype=np.uint8)
    if px.ndim != 2:
        raise ValueError("PGM pixels must be 2-D")
    h, w = px.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def read_pgm(path):
    path = Path(path)
    return decode_pgm(path.read_bytes(), str(path))


def write_pgm(path, pixels):
    Path(path).write_bytes(encode_pgm(pixels))


def decode_wav(data, path=None):
    """Samples scaled to [-1, 1) by 1/32768, and the sample rate."""
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE file", path, 0)
    pos, fmt, samples = 12, None, None
    while pos + 8 <= len(data):
        cid, size = data[pos:pos + 4], struct.unpack_from("<I", data, pos + 4)[0]
        body = pos + 8
        if body + size > len(data):
            raise FormatError(f"chunk {cid!r} runs past end of file", path, pos)
        if cid == b"fmt ":
            if size < 16:
                raise FormatError("fmt chunk too short", path, pos)
            tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", data, body)
            if tag != 1 or channels != 1 or bits != 16:
                raise FormatError(f"need PCM16 mono (tag={tag}, channels={channels}, bits={bits})", path, body)
            fmt = rate
        elif cid == b"data":
            if fmt is None:
                raise FormatError("data chunk before fmt chunk", path, pos)
            if size % 2:
                raise FormatError("odd data chunk size for 16-bit samples", path, pos)
            samples = np.frombuffer(data, dtype="<i2", count=size // 2, offset=body)
            break
        pos = body + size + (size & 1)
    if fmt is None:
        raise FormatError("missing fmt chunk", path, pos)
    if samples is None:
        raise FormatError("missing data chunk", path, pos)
    return samples.astype(np.float64) / 32768.0, fmt


def encode_wav(samples, rate):
    s = np.asarray(samples, dtype=np.float64)
    pcm = np.clip(np.round(s * 32768.0), -32768, 32767).astype("<i2").tobytes()
    rate = int(rate)
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * 2, 2, 16)
    return header + b"data" + struct.pack("<I", len(pcm)) + pcm


def read_wav(path):
    path = Path(path)
    return decode_wav(path.read_bytes(), str(path))


def write_wav(path, samples, rate):
    Path(path).write_bytes(encode_wav(samples, rate))
