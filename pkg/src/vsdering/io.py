"""Binary gather and weight files, CSV exports and PGM images.

All binary layouts are little-endian.

Gather file (``VSGD``)::

    magic      4s   b"VSGD"
    version    u32  1
    n_t        u32
    n_x        u32
    dt_ns      u64  sample interval in nanoseconds
    dx_um      u64  trace spacing in micrometers
    payload    n_t*n_x float32, trace-major (trace 0's samples first)

Weights file (``VSWT``)::

    magic b"VSWT", version u32 = 1, record count u32
    per record: kind u8 (0 conv, 1 batchnorm), rank u32, dims u32 * rank,
        conv:      kernels, biases
        batchnorm: gamma, beta, running_mean, running_var
    crc32 u32 over every preceding byte
"""

from __future__ import annotations

import csv
import struct
import zlib
from pathlib import Path

import numpy as np

from .gather import Gather
from .model import ModelParams, ModelSpec
from .tensor_core import BatchNormParams, ConvParams

GATHER_MAGIC = b"VSGD"
WEIGHTS_MAGIC = b"VSWT"
FORMAT_VERSION = 1

_GATHER_HEADER = struct.Struct("<4sIIIQQ")
_F32 = np.dtype("<f4")

_KIND_CODES = {"conv": 0, "batchnorm": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


class FormatError(ValueError):
    """Base class for unreadable or invalid files."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class CorruptWeightsError(FormatError):
    pass


class IncompatibleArchitectureError(FormatError):
    pass


def _check_magic(blob: bytes, magic: bytes, what: str) -> None:
    if len(blob) < len(magic):
        raise TruncatedError(f"truncated header: {what} file is {len(blob)} bytes")
    if blob[: len(magic)] != magic:
        raise BadMagicError(f"bad magic {blob[:4]!r}, expected {magic!r} for a {what} file")


# ---------------------------------------------------------------------------
# gathers
# ---------------------------------------------------------------------------


def write_gather(g: Gather, path) -> None:
    dt_ns = int(round(g.dt * 1e9))
    dx_um = int(round(g.dx * 1e6))
    if dt_ns <= 0 or dx_um <= 0:
        raise ValueError(f"dt={g.dt}s / dx={g.dx}m below the file resolution (1 ns / 1 um)")
    header = _GATHER_HEADER.pack(GATHER_MAGIC, FORMAT_VERSION, g.n_t, g.n_x, dt_ns, dx_um)
    payload = np.asarray(g.data, dtype=_F32).T.tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_gather(path) -> Gather:
    blob = Path(path).read_bytes()
    _check_magic(blob, GATHER_MAGIC, "gather")
    if len(blob) < _GATHER_HEADER.size:
        raise TruncatedError(f"truncated header: {len(blob)} of {_GATHER_HEADER.size} bytes")
    _, version, n_t, n_x, dt_ns, dx_um = _GATHER_HEADER.unpack_from(blob)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported gather format version {version}")
    expected = n_t * n_x * _F32.itemsize
    actual = len(blob) - _GATHER_HEADER.size
    if actual < expected:
        raise TruncatedError(f"truncated payload: {actual} of {expected} bytes")
    if actual > expected:
        raise FormatError(f"{actual - expected} trailing bytes after payload")
    if dt_ns == 0 or dx_um == 0:
        raise FormatError("zero dt or dx in header")
    data = np.frombuffer(blob, dtype=_F32, count=n_t * n_x, offset=_GATHER_HEADER.size)
    data = data.reshape(n_x, n_t).T.copy()
    return Gather(data, dt_ns / 1e9, dx_um / 1e6)


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


def _records(params: ModelParams):
    for conv, bn in zip(params.convs, params.norms):
        yield "conv", conv.kernels.shape, (conv.kernels, conv.biases)
        if bn is not None:
            yield "batchnorm", bn.gamma.shape, (
                bn.gamma,
                bn.beta,
                bn.running_mean,
                bn.running_var,
            )


def write_weights(params: ModelParams, path) -> None:
    records = list(_records(params))
    parts = [WEIGHTS_MAGIC, struct.pack("<II", FORMAT_VERSION, len(records))]
    for kind, shape, arrays in records:
        parts.append(struct.pack("<BI", _KIND_CODES[kind], len(shape)))
        parts.append(struct.pack(f"<{len(shape)}I", *shape))
        parts.extend(np.asarray(a, dtype=_F32).tobytes() for a in arrays)
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, blob: bytes, end: int):
        self.blob = blob
        self.pos = 0
        self.end = end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedError(f"truncated weights file at byte {self.pos}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(count * 4), dtype=_F32).astype(np.float32)


def read_weights(path, spec: ModelSpec | None = None) -> ModelParams:
    """Load weights, verifying the checksum and the layer layout of ``spec``."""
    spec = spec or ModelSpec()
    blob = Path(path).read_bytes()
    _check_magic(blob, WEIGHTS_MAGIC, "weights")
    if len(blob) < 16:
        raise TruncatedError(f"truncated weights file: {len(blob)} bytes")
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CorruptWeightsError("corrupt weights: checksum mismatch")
    r = _Reader(blob, len(blob) - 4)
    r.take(4)
    version, count = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported weights format version {version}")
    expected = spec.layer_records()
    records = []
    for _ in range(count):
        code, rank = r.unpack("<BI")
        if code not in _KIND_NAMES:
            raise FormatError(f"unknown record kind {code}")
        if rank > 8:
            raise FormatError(f"implausible rank {rank}")
        shape = tuple(r.unpack(f"<{rank}I")) if rank else ()
        kind = _KIND_NAMES[code]
        if kind == "conv":
            if rank != 4:
                raise FormatError(f"conv record has rank {rank}, expected 4")
            kernels = r.floats(int(np.prod(shape))).reshape(shape)
            biases = r.floats(shape[0])
            records.append((kind, shape, (kernels, biases)))
        else:
            if rank != 1:
                raise FormatError(f"batchnorm record has rank {rank}, expected 1")
            records.append((kind, shape, tuple(r.floats(shape[0]) for _ in range(4))))
    if r.pos != r.end:
        raise FormatError(f"{r.end - r.pos} unexpected bytes before checksum")
    layout = [(kind, shape) for kind, shape, _ in records]
    if layout != expected:
        raise IncompatibleArchitectureError(
            f"incompatible architecture: file has {len(layout)} records "
            f"{layout[:3]}..., model expects {len(expected)}"
        )
    convs: list[ConvParams] = []
    norms: list[BatchNormParams | None] = []
    for kind, _, arrays in records:
        if kind == "conv":
            convs.append(ConvParams(*arrays))
            norms.append(None)
        else:
            gamma, beta, mean, var = arrays
            norms[-1] = BatchNormParams(
                gamma, beta, mean, var, eps=spec.bn_eps, momentum=spec.bn_momentum
            )
    return ModelParams(convs, norms)


# ---------------------------------------------------------------------------
# text exports and images
# ---------------------------------------------------------------------------


def write_picks_csv(picks, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trace_index", "sample_index", "time_seconds"])
        for j, p in enumerate(picks.picks):
            if p is None:
                w.writerow([j, "", ""])
            else:
                w.writerow([j, p, repr(p * picks.dt)])


def read_picks_csv(path) -> list[int | None]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [int(r["sample_index"]) if r["sample_index"] else None for r in rows]


def write_loss_csv(log, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "loss"])
        for step, epoch, loss in log.steps:
            w.writerow([step, epoch, repr(loss)])


def write_matrix_csv(matrix: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(matrix), delimiter=",", fmt="%.6g")


def write_pgm(matrix: np.ndarray, path, value_range: tuple[float, float]) -> None:
    """8-bit binary PGM; ``value_range`` maps linearly onto 0..255, clamped.

    Rows are written top to bottom, so a gather shows time increasing
    downward.  Exact half-way values round down (the range midpoint is 127).
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"PGM needs a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("PGM matrix contains non-finite values")
    lo, hi = value_range
    if not hi > lo:
        raise ValueError(f"invalid range [{lo}, {hi}]")
    scaled = (m - lo) / (hi - lo) * 255.0
    pixels = np.clip(np.ceil(scaled - 0.5), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise BadMagicError("not a binary PGM file")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)
