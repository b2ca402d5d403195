"""Binary model file format.

Layout (all integers little-endian)::

    offset 0   4 bytes   magic b"LIDS"
    offset 4   uint32    format version (currently 1)
    offset 8   uint32    header length N in bytes
    offset 12  N bytes   UTF-8 JSON header
    offset 12+N          data section: float32 LE tensor blobs, in manifest order

The header is a JSON object with keys ``config``, ``word_vocab``,
``char_vocab``, ``label_names`` and ``tensors``. ``tensors`` is a list of
``{"name", "shape", "offset", "nbytes"}`` with offsets relative to the start of
the data section. The JSON is written with sorted keys and no whitespace, so a
given model always serializes to the same bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import encoder as enc
from .config import Config, ConfigError
from .text import CharVocab, WordVocab
from .trainer import Model

MAGIC = b"LIDS"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


class ModelFormatError(ValueError):
    kind = "corrupt model file"

    def __init__(self, message, path=None):
        self.path = path
        prefix = f"{path}: " if path is not None else ""
        super().__init__(f"{prefix}{self.kind}: {message}")


class BadMagicError(ModelFormatError):
    kind = "bad magic"


class UnsupportedVersionError(ModelFormatError):
    kind = "unsupported version"


class TruncatedHeaderError(ModelFormatError):
    kind = "truncated header"


class CorruptHeaderError(ModelFormatError):
    kind = "corrupt header"


class TruncatedBlobError(ModelFormatError):
    kind = "truncated blob"


class ShapeMismatchError(ModelFormatError):
    kind = "shape mismatch"


def to_bytes(model: Model) -> bytes:
    shapes = enc.param_shapes(model.config, len(model.word_vocab), len(model.char_vocab),
                              model.n_classes)
    manifest, blobs, offset = [], [], 0
    for name in shapes:
        data = np.ascontiguousarray(model.params[name], dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(shapes[name]), "offset": offset,
                         "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "config": model.config.to_dict(),
        "word_vocab": model.word_vocab.tokens,
        "char_vocab": model.char_vocab.tokens,
        "label_names": list(model.label_names),
        "tensors": manifest,
    }
    head = json.dumps(header, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + b"".join(blobs)


def save(model: Model, path) -> int:
    data = to_bytes(model)
    path = Path(path)
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write model to {path}: {exc.strerror}") from exc
    return len(data)


def from_bytes(buf: bytes, path=None) -> Model:
    if len(buf) < _PREFIX.size:
        if buf[:4] != MAGIC[:len(buf[:4])]:
            raise BadMagicError(f"expected {MAGIC!r}", path)
        raise TruncatedHeaderError(f"file is only {len(buf)} bytes", path)
    magic, version, head_len = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"expected {MAGIC!r}, found {magic!r}", path)
    if version != VERSION:
        raise UnsupportedVersionError(f"version {version}, this build reads {VERSION}", path)
    data_start = _PREFIX.size + head_len
    if data_start > len(buf):
        raise TruncatedHeaderError(f"header declares {head_len} bytes, file has {len(buf) - _PREFIX.size}", path)
    try:
        header = json.loads(buf[_PREFIX.size:data_start].decode("utf-8"))
        cfg = Config.from_dict(header["config"])
        word_vocab = WordVocab(header["word_vocab"])
        char_vocab = CharVocab(header["char_vocab"])
        label_names = [str(x) for x in header["label_names"]]
        manifest = header["tensors"]
        entries = [(str(t["name"]), tuple(int(d) for d in t["shape"]), int(t["offset"]), int(t["nbytes"]))
                   for t in manifest]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError, ConfigError) as exc:
        raise CorruptHeaderError(str(exc), path) from None
    if not label_names:
        raise CorruptHeaderError("no label names", path)

    expected = enc.param_shapes(cfg, len(word_vocab), len(char_vocab), len(label_names))
    names = [e[0] for e in entries]
    if sorted(names) != sorted(expected) or len(set(names)) != len(names):
        raise CorruptHeaderError(f"tensor set {names} does not match the config", path)
    data_len = len(buf) - data_start
    params, prev_end = {}, 0
    for name, shape, offset, nbytes in entries:
        if shape != expected[name]:
            raise ShapeMismatchError(f"{name} declared {shape}, config implies {expected[name]}", path)
        if nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
            raise ShapeMismatchError(f"{name} declares {nbytes} bytes for shape {shape}", path)
        if offset < prev_end:
            raise CorruptHeaderError(f"{name} offset {offset} overlaps the previous tensor", path)
        if offset + nbytes > data_len:
            raise TruncatedBlobError(f"{name} needs bytes up to {offset + nbytes}, data section has {data_len}", path)
        start = data_start + offset
        params[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=start).reshape(shape).astype(np.float32)
        prev_end = offset + nbytes
    if prev_end != data_len:
        raise CorruptHeaderError(f"{data_len - prev_end} trailing bytes after the last tensor", path)
    for name, arr in params.items():
        if not np.all(np.isfinite(arr)):
            raise CorruptHeaderError(f"non-finite values in {name}", path)
    return Model(params, word_vocab, char_vocab, label_names, cfg)


def load(path) -> Model:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read model {path}: {exc.strerror}") from exc
    return from_bytes(buf, path)
