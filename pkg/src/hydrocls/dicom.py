"""Minimal single-frame DICOM reading.

Handles uncompressed little-endian files (implicit or explicit VR) well
enough to pull one grayscale frame and its instance number out of a slice
export. Compressed transfer syntaxes and full tag semantics are out of
scope; anything unsupported raises :class:`IngestError`.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import IngestError

_IMPLICIT_LE = "1.2.840.10008.1.2"
_EXPLICIT_LE = "1.2.840.10008.1.2.1"

# VRs whose explicit encoding carries a 4-byte length after 2 reserved bytes.
_LONG_VRS = {b"OB", b"OW", b"OF", b"OD", b"OL", b"SQ", b"UC", b"UR", b"UT", b"UN"}

_UNDEFINED = 0xFFFFFFFF


class _Stream:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IngestError("truncated DICOM stream")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.read(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.read(4))[0]

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.data)


def _skip_undefined(stream: _Stream) -> None:
    """Skip forward past an undefined-length sequence, handling nesting."""
    depth = 1
    while depth > 0:
        if stream.exhausted:
            raise IngestError("unterminated undefined-length sequence")
        group = stream.u16()
        elem = stream.u16()
        length = stream.u32()
        if (group, elem) == (0xFFFE, 0xE0DD):  # sequence delimiter
            depth -= 1
        elif (group, elem) == (0xFFFE, 0xE000):  # item
            if length != _UNDEFINED:
                stream.read(length)
        elif (group, elem) == (0xFFFE, 0xE00D):  # item delimiter
            pass
        else:
            if length == _UNDEFINED:
                depth += 1
            else:
                stream.read(length)


def _read_element(stream: _Stream, explicit: bool) -> tuple[tuple[int, int], bytes | None]:
    group = stream.u16()
    elem = stream.u16()
    if explicit and group != 0xFFFE:
        vr = stream.read(2)
        if vr in _LONG_VRS:
            stream.read(2)
            length = stream.u32()
        else:
            length = stream.u16()
        is_seq = vr == b"SQ"
    else:
        length = stream.u32()
        is_seq = False
    if length == _UNDEFINED:
        _skip_undefined(stream)
        return (group, elem), None
    if is_seq:
        stream.read(length)
        return (group, elem), None
    return (group, elem), stream.read(length)


def _parse_elements(stream: _Stream, explicit: bool, wanted: set[tuple[int, int]]) -> dict:
    found: dict[tuple[int, int], bytes] = {}
    while not stream.exhausted:
        tag, value = _read_element(stream, explicit)
        if value is not None and tag in wanted:
            found[tag] = value
        if tag == (0x7FE0, 0x0010):
            break
    return found


def _us(value: bytes) -> int:
    return struct.unpack("<H", value[:2])[0]


def read_dicom_frame(path: str | Path) -> tuple[np.ndarray, int | None]:
    """Read one uncompressed grayscale frame from a DICOM file.

    Returns the raw integer pixel array (no windowing) and the instance
    number when present. Raises :class:`IngestError` for missing magic,
    unsupported transfer syntaxes, or malformed pixel data.
    """
    data = Path(path).read_bytes()
    if len(data) < 132 or data[128:132] != b"DICM":
        raise IngestError(f"not a DICOM part-10 file: {path}")

    stream = _Stream(data, 132)
    # File meta group is always explicit VR little endian.
    tag, value = _read_element(stream, explicit=True)
    if tag != (0x0002, 0x0000) or value is None:
        raise IngestError(f"missing file meta group length: {path}")
    meta_len = struct.unpack("<I", value)[0]
    meta = _Stream(stream.read(meta_len))
    syntax = ""
    while not meta.exhausted:
        tag, value = _read_element(meta, explicit=True)
        if tag == (0x0002, 0x0010) and value is not None:
            syntax = value.decode("ascii", "replace").rstrip("\x00 ")
    if syntax == _EXPLICIT_LE:
        explicit = True
    elif syntax == _IMPLICIT_LE:
        explicit = False
    else:
        raise IngestError(f"unsupported transfer syntax {syntax!r}: {path}")

    wanted = {
        (0x0020, 0x0013),  # instance number
        (0x0028, 0x0002),  # samples per pixel
        (0x0028, 0x0010),  # rows
        (0x0028, 0x0011),  # columns
        (0x0028, 0x0100),  # bits allocated
        (0x0028, 0x0103),  # pixel representation
        (0x7FE0, 0x0010),  # pixel data
    }
    found = _parse_elements(stream, explicit, wanted)

    try:
        rows = _us(found[(0x0028, 0x0010)])
        cols = _us(found[(0x0028, 0x0011)])
        bits = _us(found[(0x0028, 0x0100)])
        pixels = found[(0x7FE0, 0x0010)]
    except KeyError as exc:
        raise IngestError(f"missing required image attributes: {path}") from exc

    samples = _us(found.get((0x0028, 0x0002), b"\x01\x00"))
    if samples != 1:
        raise IngestError(f"only single-sample (grayscale) DICOM supported: {path}")
    signed = _us(found.get((0x0028, 0x0103), b"\x00\x00")) == 1
    if bits == 8:
        dtype = np.int8 if signed else np.uint8
    elif bits == 16:
        dtype = np.dtype("<i2") if signed else np.dtype("<u2")
    else:
        raise IngestError(f"unsupported bits allocated {bits}: {path}")

    expected = rows * cols * (bits // 8)
    if len(pixels) < expected:
        raise IngestError(f"pixel data shorter than Rows*Columns: {path}")
    frame = np.frombuffer(pixels[:expected], dtype=dtype).reshape(rows, cols)

    instance: int | None = None
    raw_instance = found.get((0x0020, 0x0013))
    if raw_instance is not None:
        text = raw_instance.decode("ascii", "replace").strip("\x00 ")
        if text:
            try:
                instance = int(text)
            except ValueError:
                instance = None
    return frame.astype(np.int64), instance
