"""Bit-exact interchange: PGM/PPM images, ``.fld`` scalar fields, attention bundles.

Images live in memory as float64 arrays of shape ``(h, w)`` or ``(h, w, 3)``
with intensities in [0, 1]. Scalar fields are 2D float arrays.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FIELD_MAGIC = b"MSF1"
FIELD_HEADER = struct.Struct("<4sIII")  # magic, rows, cols, reserved
MIN_SIDE = 8


class FormatError(ValueError):
    """Malformed interchange file; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int | None = None, path=None):
        where = f" at byte {offset}" if offset is not None else ""
        src = f"{path}: " if path is not None else ""
        super().__init__(f"{src}{message}{where}")
        self.offset = offset


class ValidationError(ValueError):
    """Content that parses but violates a data invariant."""


def check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] not in (1, 3)):
        raise ValidationError(f"image must be (h, w) or (h, w, 3), got shape {img.shape}")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.shape[0] < MIN_SIDE or img.shape[1] < MIN_SIDE:
        raise ValidationError(f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {img.shape[:2]}")
    if not np.all(np.isfinite(img)):
        raise ValidationError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValidationError("image intensities must lie in [0, 1]")
    return img


def check_field(fld: np.ndarray) -> np.ndarray:
    fld = np.asarray(fld, dtype=np.float64)
    if fld.ndim != 2 or fld.size == 0:
        raise ValidationError(f"field must be a non-empty 2D array, got shape {fld.shape}")
    if not np.all(np.isfinite(fld)):
        raise ValidationError("field contains non-finite values")
    return fld


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc


# -- images -----------------------------------------------------------------


def _next_token(buf: bytes, pos: int, path) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of header", start, path)
    return buf[start:pos], pos


def decode_pnm(buf: bytes, path=None) -> np.ndarray:
    if len(buf) < 2 or buf[:2] not in (b"P5", b"P6"):
        raise FormatError("expected binary PGM (P5) or PPM (P6) magic", 0, path)
    channels = 1 if buf[:2] == b"P5" else 3
    pos = 2
    values, starts = [], []
    for name in ("width", "height", "maxval"):
        tok, pos = _next_token(buf, pos, path)
        starts.append(pos - len(tok))
        if not tok.isdigit():
            raise FormatError(f"malformed {name} {tok!r}", starts[-1], path)
        values.append(int(tok))
    width, height, maxval = values
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} (only 255)", starts[2], path)
    if width == 0 or height == 0:
        raise FormatError("zero image dimension", starts[0] if width == 0 else starts[1], path)
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError("missing whitespace before raster", pos, path)
    pos += 1
    need = width * height * channels
    if len(buf) - pos < need:
        raise FormatError(f"truncated raster: need {need} bytes, have {len(buf) - pos}", len(buf), path)
    raw = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    img = raw.astype(np.float64) / 255.0
    if channels == 1:
        return img.reshape(height, width)
    return img.reshape(height, width, 3)


def encode_pnm(img: np.ndarray) -> bytes:
    img = check_image(img)
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    magic = b"P5" if img.ndim == 2 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.shape[1], img.shape[0])
    return header + q.tobytes()


def load_image(path) -> np.ndarray:
    img = decode_pnm(_read_bytes(path), path)
    return check_image(img)


def save_image(img: np.ndarray, path) -> None:
    atomic_write_bytes(path, encode_pnm(img))


# -- scalar fields ----------------------------------------------------------


def encode_field(fld: np.ndarray) -> bytes:
    fld = np.asarray(fld)
    if fld.ndim != 2 or fld.size == 0:
        raise ValidationError(f"cannot save empty or non-2D field of shape {fld.shape}")
    fld = check_field(fld)
    rows, cols = fld.shape
    return FIELD_HEADER.pack(FIELD_MAGIC, rows, cols, 0) + fld.astype("<f4").tobytes()


def decode_field(buf: bytes, path=None) -> np.ndarray:
    if len(buf) < FIELD_HEADER.size:
        raise FormatError("truncated field header", len(buf), path)
    magic, rows, cols, _ = FIELD_HEADER.unpack_from(buf)
    if magic != FIELD_MAGIC:
        raise FormatError(f"bad field magic {magic!r}", 0, path)
    if rows == 0 or cols == 0:
        raise FormatError("field has zero size", 4, path)
    need = rows * cols * 4
    have = len(buf) - FIELD_HEADER.size
    if have != need:
        raise FormatError(f"payload size {have} does not match {rows}x{cols} floats", FIELD_HEADER.size, path)
    data = np.frombuffer(buf, dtype="<f4", offset=FIELD_HEADER.size).reshape(rows, cols)
    return check_field(data.astype(np.float64))


def save_field(fld: np.ndarray, path) -> None:
    atomic_write_bytes(path, encode_field(fld))


def load_field(path) -> np.ndarray:
    return decode_field(_read_bytes(path), path)


# -- attention bundles ------------------------------------------------------


@dataclass(frozen=True)
class AttentionSlice:
    layer: int
    head: int
    timestep: int
    map: np.ndarray

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.layer, self.head, self.timestep)


@dataclass
class Token:
    text: str
    slices: list[AttentionSlice] = field(default_factory=list)


@dataclass
class Word:
    text: str
    tokens: list[int]


@dataclass
class AttentionBundle:
    tokens: list[Token]
    words: list[Word]
    target_size: tuple[int, int]

    def validate(self) -> "AttentionBundle":
        h, w = self.target_size
        if h < 1 or w < 1:
            raise ValidationError(f"bad target_size {self.target_size}")
        for ti, tok in enumerate(self.tokens):
            seen = set()
            for sl in tok.slices:
                if sl.key in seen:
                    raise ValidationError(f"token {ti} ({tok.text!r}): duplicate (layer, head, timestep) {sl.key}")
                seen.add(sl.key)
                m = sl.map
                if m.ndim != 2 or m.size == 0:
                    raise ValidationError(f"token {ti} slice {sl.key}: empty map")
                if not np.all(np.isfinite(m)):
                    raise ValidationError(f"token {ti} slice {sl.key}: non-finite attention")
                if m.min() < 0:
                    raise ValidationError(f"token {ti} slice {sl.key}: negative attention")
        for wi, word in enumerate(self.words):
            if not word.tokens:
                raise ValidationError(f"word {wi} ({word.text!r}) has no tokens")
            for t in word.tokens:
                if not 0 <= t < len(self.tokens):
                    raise ValidationError(f"word {wi} ({word.text!r}) references missing token {t}")
        return self

    def scaled(self, alpha: float) -> "AttentionBundle":
        tokens = [
            Token(t.text, [AttentionSlice(s.layer, s.head, s.timestep, s.map * alpha) for s in t.slices])
            for t in self.tokens
        ]
        return AttentionBundle(tokens, [Word(w.text, list(w.tokens)) for w in self.words], self.target_size)


def load_bundle(manifest_path) -> AttentionBundle:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(_read_bytes(manifest_path))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", exc.pos, manifest_path) from exc
    base = manifest_path.parent
    payloads: dict[str, bytes] = {}
    try:
        target = tuple(int(v) for v in doc["target_size"])
        tokens = []
        for ti, tdoc in enumerate(doc["tokens"]):
            slices = []
            for si, sdoc in enumerate(tdoc["slices"]):
                where = f"token {ti} slice {si}"
                rows, cols = int(sdoc["rows"]), int(sdoc["cols"])
                fname = sdoc["data_file"]
                if fname not in payloads:
                    path = base / fname
                    if not path.is_file():
                        raise ValidationError(f"{where}: missing payload file {fname}")
                    payloads[fname] = path.read_bytes()
                blob = payloads[fname]
                off = int(sdoc.get("data_offset", 0))
                need = rows * cols * 4
                if rows < 1 or cols < 1 or off < 0 or off + need > len(blob):
                    raise ValidationError(
                        f"{where}: length mismatch, need {need} bytes at offset {off} of {fname} ({len(blob)} bytes)"
                    )
                data = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=off)
                slices.append(
                    AttentionSlice(
                        int(sdoc["layer"]),
                        int(sdoc["head"]),
                        int(sdoc["timestep"]),
                        data.reshape(rows, cols).astype(np.float64),
                    )
                )
            if not slices:
                raise ValidationError(f"token {ti} has no slices")
            tokens.append(Token(str(tdoc.get("text", "")), slices))
        words = [Word(str(w.get("text", "")), [int(t) for t in w["tokens"]]) for w in doc["words"]]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{manifest_path}: malformed manifest entry ({exc!r})") from exc
    return AttentionBundle(tokens, words, target).validate()


def save_bundle(bundle: AttentionBundle, manifest_path, payload_name: str = "attention.f32") -> None:
    """Write a manifest plus one concatenated little-endian float32 payload."""
    bundle.validate()
    manifest_path = Path(manifest_path)
    chunks = []
    offset = 0
    tok_docs = []
    for tok in bundle.tokens:
        sdocs = []
        for sl in tok.slices:
            raw = np.ascontiguousarray(sl.map, dtype="<f4").tobytes()
            sdocs.append(
                {
                    "layer": sl.layer,
                    "head": sl.head,
                    "timestep": sl.timestep,
                    "rows": sl.map.shape[0],
                    "cols": sl.map.shape[1],
                    "data_file": payload_name,
                    "data_offset": offset,
                }
            )
            chunks.append(raw)
            offset += len(raw)
        tok_docs.append({"text": tok.text, "slices": sdocs})
    doc = {
        "target_size": list(bundle.target_size),
        "words": [{"text": w.text, "tokens": list(w.tokens)} for w in bundle.words],
        "tokens": tok_docs,
    }
    atomic_write_bytes(manifest_path.parent / payload_name, b"".join(chunks))
    atomic_write_bytes(manifest_path, json.dumps(doc, indent=1).encode())
