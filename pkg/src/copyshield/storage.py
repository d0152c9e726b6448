"""Binary model files, decoder spec files, pieced-model references, reports.

Model file layout (little-endian)::

    b"AFRG"  u16 version
    u32 input_dim  u32 num_classes  u32 layer_count
    per layer: u32 rows  u32 cols  u8 activation (0 identity, 1 relu)
               rows*cols f64 weights (row-major)  rows f64 bias

All writes go to a temporary sibling first and are renamed into place.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .attractors import PiecedModel, QimDecoder, SpreadSpectrumDecoder, piece_together
from .config import ConfigError, parse_text
from .numerics import Layer, Model

MAGIC = b"AFRG"
FORMAT_VERSION = 1
_ACT_CODES = {"identity": 0, "relu": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


class ModelFileError(ValueError):
    pass


class BadMagicError(ModelFileError):
    pass


class TruncatedFileError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class SpecFileError(ValueError):
    pass


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def model_to_bytes(model: Model) -> bytes:
    out = [MAGIC, struct.pack("<H", FORMAT_VERSION),
           struct.pack("<III", model.input_dim, model.num_classes, len(model.layers))]
    for layer in model.layers:
        rows, cols = layer.weights.shape
        out.append(struct.pack("<IIB", rows, cols, _ACT_CODES[layer.activation]))
        out.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(out)


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(
                f"file ends inside {what} (need {n} bytes at offset {self.pos}, {len(self.buf)} total)")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b


def model_from_bytes(buf: bytes) -> Model:
    cur = _Cursor(buf)
    if len(buf) < len(MAGIC):
        raise TruncatedFileError("file shorter than the magic number")
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<H", cur.take(2, "version"))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, this build reads {FORMAT_VERSION}")
    ell, n, count = struct.unpack("<III", cur.take(12, "header"))
    if count < 1:
        raise ModelFileError("model has no layers")
    layers = []
    for k in range(count):
        rows, cols, act = struct.unpack("<IIB", cur.take(9, f"layer {k} header"))
        if act not in _ACT_NAMES:
            raise ModelFileError(f"layer {k}: unknown activation code {act}")
        W = np.frombuffer(cur.take(8 * rows * cols, f"layer {k} weights"), dtype="<f8")
        b = np.frombuffer(cur.take(8 * rows, f"layer {k} bias"), dtype="<f8")
        layers.append(Layer(W.astype(np.float64).reshape(rows, cols), b.astype(np.float64),
                            _ACT_NAMES[act]))
    if cur.pos != len(buf):
        raise ModelFileError(f"{len(buf) - cur.pos} trailing bytes after the last layer")
    try:
        model = Model(tuple(layers))
    except ValueError as exc:
        raise ModelFileError(f"inconsistent layer shapes: {exc}") from None
    if (model.input_dim, model.num_classes) != (ell, n):
        raise ModelFileError(f"header says {ell} -> {n}, layers give {model.input_dim} -> {model.num_classes}")
    return model


def save_model(model: Model, path) -> None:
    atomic_write(path, model_to_bytes(model))


def load_model(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())


def is_model_file(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == MAGIC


# Decoder spec files. The seed is a secret: keep these files private.

def decoder_to_text(dec) -> str:
    if dec.seed is None:
        raise SpecFileError("decoders built from explicit messages have no seed and cannot be saved")
    lines = ["# copyshield decoder spec; the seed is secret",
             f"kind = {dec.kind}",
             f"seed = {int(dec.seed)}",
             f"num_classes = {dec.num_classes}",
             f"input_dim = {dec.input_dim}"]
    if dec.kind == "spread":
        lines.append(f"gain = {float(dec.gain)!r}")
    else:
        lines.append(f"projections = {dec.projections}")
        lines.append(f"delta = {float(dec.delta)!r}")
        lines.append("alpha = " + ",".join(repr(float(a)) for a in dec.alpha))
    return "\n".join(lines) + "\n"


def _kv(text: str, source: str) -> dict[str, str]:
    try:
        return parse_text(text, source)
    except ConfigError as exc:
        raise SpecFileError(str(exc)) from None


def decoder_from_text(text: str, source: str = "<decoder>"):
    kv = _kv(text, source)

    def need(key, conv):
        if key not in kv:
            raise SpecFileError(f"{source}: missing key {key!r}")
        try:
            return conv(kv[key])
        except ValueError:
            raise SpecFileError(f"{source}: bad value for {key!r}: {kv[key]!r}") from None

    kind = need("kind", str)
    seed, n, ell = need("seed", int), need("num_classes", int), need("input_dim", int)
    try:
        if kind == "spread":
            return SpreadSpectrumDecoder(seed, n, ell, need("gain", float))
        if kind == "qim":
            alpha = need("alpha", lambda v: tuple(float(a) for a in v.split(",")))
            return QimDecoder(seed, n, ell, need("projections", int), need("delta", float), alpha)
    except ValueError as exc:
        raise SpecFileError(f"{source}: {exc}") from None
    raise SpecFileError(f"{source}: unknown decoder kind {kind!r}")


def save_decoder(dec, path) -> None:
    atomic_write(path, decoder_to_text(dec))


def load_decoder(path):
    path = Path(path)
    return decoder_from_text(path.read_text(), str(path))


# Pieced-model reference: names a master file (with its digest) and a decoder spec.

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_pieced_reference(path, master_path, decoder_path) -> None:
    path = Path(path)
    rel = lambda p: os.path.relpath(Path(p).resolve(), path.resolve().parent)
    text = (f"master = {rel(master_path)}\n"
            f"master_sha256 = {_sha256(master_path)}\n"
            f"decoder = {rel(decoder_path)}\n")
    atomic_write(path, text)


def load_pieced_reference(path) -> PiecedModel:
    path = Path(path)
    kv = _kv(path.read_text(), str(path))
    for key in ("master", "master_sha256", "decoder"):
        if key not in kv:
            raise SpecFileError(f"{path}: missing key {key!r}")
    master_path = path.parent / kv["master"]
    if _sha256(master_path) != kv["master_sha256"]:
        raise SpecFileError(f"{path}: master file {master_path} does not match its recorded digest")
    return piece_together(load_model(master_path), load_decoder(path.parent / kv["decoder"]))


def load_any_model(path):
    """A plain model file, or a pieced-model reference."""
    path = Path(path)
    if is_model_file(path):
        return load_model(path)
    return load_pieced_reference(path)


# Reports

def fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def csv_text(header: list[str], rows: Iterable[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_value(v) if not isinstance(v, str) else v for v in row])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    return v


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_csv(path, header, rows) -> None:
    atomic_write(path, csv_text(header, rows))


def write_json(path, obj) -> None:
    atomic_write(path, json_text(obj))
