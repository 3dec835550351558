"""Affordance vocabulary, raster types and the binary file formats.

File layouts (all integers little-endian):

    AFMT  magic | u8 version | u32 A | u32 H | u32 W | A*H*W f32, channel-major
    AFMK  magic | u8 version | u32 H | u32 W | H*W u8 in {0, 1}
    PLBL  magic | u8 version | u32 H | u32 W | H*W u16, legend in a JSON sidecar
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

AFFORDANCES: tuple[str, ...] = (
    "obstruct",
    "pinch-pull",
    "break",
    "sit",
    "grasp",
    "illumination",
    "support",
    "place-on",
    "hook-pull",
    "tip-push",
    "warmth",
    "observe",
    "dry",
    "roll",
    "walk",
)
NUM_AFFORDANCES = len(AFFORDANCES)

# spellings seen in printed result tables; accepted on input only
ALIASES: dict[str, str] = {
    "read/watch": "observe",
    "read-watch": "observe",
    "tip/push": "tip-push",
    "tip_push": "tip-push",
    "pinch_pull": "pinch-pull",
    "hook_pull": "hook-pull",
    "place_on": "place-on",
}

FORMAT_VERSION = 1
TENSOR_MAGIC = b"AFMT"
MASK_MAGIC = b"AFMK"
LABEL_MAGIC = b"PLBL"


class ValidationError(ValueError):
    """A value violates the invariants of its type."""


class FormatError(ValueError):
    """A binary stream does not follow the expected layout."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def canonical_affordance(name: str) -> str:
    """Map a printed affordance name or alias to its canonical identifier."""
    key = name.strip().lower()
    key = ALIASES.get(key, key)
    if key not in AFFORDANCES:
        raise KeyError(f"unknown affordance {name!r}")
    return key


def affordance_index(name: str) -> int:
    return AFFORDANCES.index(canonical_affordance(name))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RgbRaster:
    """RGB image stored as an (H, W, 3) float array with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValidationError(f"RGB raster must be HxWx3, got shape {data.shape}")
        if not np.all(np.isfinite(data)) or data.min(initial=0.0) < 0 or data.max(initial=0.0) > 1:
            raise ValidationError("RGB raster values must be finite and in [0, 1]")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def chw(self) -> np.ndarray:
        """Channel-first copy, the layout the network consumes."""
        return np.ascontiguousarray(self.data.transpose(2, 0, 1))


@dataclass(frozen=True)
class AffordanceTensor:
    """Stack of per-affordance maps, shape (A, H, W), values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if not np.issubdtype(v.dtype, np.floating):
            v = v.astype(np.float64)
        if v.ndim != 3 or v.shape[0] != NUM_AFFORDANCES:
            raise ValidationError(
                f"affordance tensor must be {NUM_AFFORDANCES}xHxW, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError("affordance tensor contains non-finite values")
        if v.size and (v.min() < 0 or v.max() > 1):
            raise ValidationError("affordance tensor values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def channel(self, name: str) -> np.ndarray:
        return self.values[affordance_index(name)]


@dataclass(frozen=True)
class CoverageMask:
    """Per-pixel validity map; 1 where affordance ground truth exists."""

    valid: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.valid)
        if v.ndim != 2:
            raise ValidationError(f"coverage mask must be HxW, got shape {v.shape}")
        if not np.all((v == 0) | (v == 1)):
            raise ValidationError("coverage mask values must be 0 or 1")
        object.__setattr__(self, "valid", _frozen(v.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @classmethod
    def full(cls, height: int, width: int) -> "CoverageMask":
        return cls(np.ones((height, width), dtype=np.uint8))


@dataclass(frozen=True)
class PartLabelMap:
    """Per-pixel part label indices plus the legend naming each index.

    Index 0 means "unlabeled" and never appears in the legend.
    """

    indices: np.ndarray
    legend: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.ndim != 2:
            raise ValidationError(f"label map must be HxW, got shape {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() > 0xFFFF):
            raise ValidationError("label indices must fit in an unsigned 16-bit integer")
        legend = {int(k): str(v) for k, v in self.legend.items()}
        if 0 in legend:
            raise ValidationError("index 0 is reserved for unlabeled pixels")
        for k, path in legend.items():
            if not 0 < k <= 0xFFFF:
                raise ValidationError(f"legend index {k} out of range")
            parts = path.split("/")
            if not path or path != path.lower() or any(not p for p in parts):
                raise ValidationError(f"bad label path {path!r} for index {k}")
        missing = set(np.unique(idx).tolist()) - {0} - set(legend)
        if missing:
            raise ValidationError(f"label indices {sorted(missing)} missing from legend")
        object.__setattr__(self, "indices", _frozen(idx.astype(np.uint16)))
        object.__setattr__(self, "legend", dict(sorted(legend.items())))

    @property
    def height(self) -> int:
        return self.indices.shape[0]

    @property
    def width(self) -> int:
        return self.indices.shape[1]


# --- binary IO -------------------------------------------------------------


def _read_exact(stream: BinaryIO, n: int, offset: int, what: str) -> bytes:
    buf = stream.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated {what}: expected {n} bytes, got {len(buf)}", offset)
    return buf


def _read_header(stream: BinaryIO, magic: bytes, ndims: int) -> tuple[int, ...]:
    got = stream.read(4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
    version = _read_exact(stream, 1, 4, "header")[0]
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    dims = struct.unpack(f"<{ndims}I", _read_exact(stream, 4 * ndims, 5, "header"))
    return dims


def _read_payload(stream: BinaryIO, dtype: str, count: int, offset: int) -> np.ndarray:
    nbytes = count * np.dtype(dtype).itemsize
    buf = stream.read(nbytes)
    if len(buf) != nbytes:
        raise FormatError(
            f"truncated payload: expected {nbytes} bytes, got {len(buf)}", offset + len(buf)
        )
    if stream.read(1):
        raise FormatError("trailing bytes after payload", offset + nbytes)
    return np.frombuffer(buf, dtype=dtype)


def write_tensor(t: AffordanceTensor, sink: BinaryIO) -> int:
    if not isinstance(t, AffordanceTensor):
        t = AffordanceTensor(t)
    a, h, w = t.values.shape
    payload = np.ascontiguousarray(t.values, dtype="<f4").tobytes()
    header = TENSOR_MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<3I", a, h, w)
    sink.write(header)
    sink.write(payload)
    return len(header) + len(payload)


def read_tensor(source: BinaryIO) -> AffordanceTensor:
    a, h, w = _read_header(source, TENSOR_MAGIC, 3)
    if a != NUM_AFFORDANCES:
        raise FormatError(f"expected {NUM_AFFORDANCES} channels, file declares {a}", 5)
    data = _read_payload(source, "<f4", a * h * w, 17).astype(np.float32)
    bad = np.flatnonzero(~np.isfinite(data) | (data < 0) | (data > 1))
    if bad.size:
        raise FormatError("value outside [0, 1] or non-finite", 17 + 4 * int(bad[0]))
    return AffordanceTensor(data.reshape(a, h, w))


def write_mask(m: CoverageMask, sink: BinaryIO) -> int:
    if not isinstance(m, CoverageMask):
        m = CoverageMask(m)
    h, w = m.valid.shape
    header = MASK_MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<2I", h, w)
    payload = np.ascontiguousarray(m.valid, dtype=np.uint8).tobytes()
    sink.write(header)
    sink.write(payload)
    return len(header) + len(payload)


def read_mask(source: BinaryIO) -> CoverageMask:
    h, w = _read_header(source, MASK_MAGIC, 2)
    data = _read_payload(source, "u1", h * w, 13)
    bad = np.flatnonzero(data > 1)
    if bad.size:
        raise FormatError(f"mask byte {int(data[bad[0]])} not in {{0, 1}}", 13 + int(bad[0]))
    return CoverageMask(data.reshape(h, w))


def write_labels(labels: PartLabelMap, sink: BinaryIO) -> int:
    h, w = labels.indices.shape
    header = LABEL_MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<2I", h, w)
    payload = np.ascontiguousarray(labels.indices, dtype="<u2").tobytes()
    sink.write(header)
    sink.write(payload)
    return len(header) + len(payload)


def read_labels(source: BinaryIO, legend: Mapping) -> PartLabelMap:
    h, w = _read_header(source, LABEL_MAGIC, 2)
    data = _read_payload(source, "<u2", h * w, 13)
    return PartLabelMap(data.reshape(h, w).astype(np.uint16), {int(k): v for k, v in legend.items()})


def legend_to_json(legend: Mapping[int, str]) -> str:
    return json.dumps({str(k): v for k, v in sorted(legend.items())}, indent=1)


# --- file helpers ----------------------------------------------------------


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _encode(writer, obj) -> bytes:
    buf = io.BytesIO()
    writer(obj, buf)
    return buf.getvalue()


def save_tensor(t: AffordanceTensor, path) -> None:
    atomic_write_bytes(path, _encode(write_tensor, t))


def load_tensor(path) -> AffordanceTensor:
    with open(path, "rb") as f:
        return read_tensor(f)


def save_mask(m: CoverageMask, path) -> None:
    atomic_write_bytes(path, _encode(write_mask, m))


def load_mask(path) -> CoverageMask:
    with open(path, "rb") as f:
        return read_mask(f)


def save_labels(labels: PartLabelMap, path, legend_path) -> None:
    atomic_write_bytes(path, _encode(write_labels, labels))
    atomic_write_text(legend_path, legend_to_json(labels.legend))


def load_labels(path, legend_path) -> PartLabelMap:
    with open(legend_path, encoding="utf-8") as f:
        legend = json.load(f)
    with open(path, "rb") as f:
        return read_labels(f, legend)


def image_to_uint8(image: RgbRaster) -> np.ndarray:
    return np.round(image.data * 255.0).astype(np.uint8)


def encode_png(pixels: np.ndarray) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def save_image(image: RgbRaster, path) -> None:
    atomic_write_bytes(path, encode_png(image_to_uint8(image)))


def load_image(path) -> RgbRaster:
    from PIL import Image

    with Image.open(path) as im:
        pixels = np.asarray(im.convert("RGB"), dtype=np.float64)
    return RgbRaster(pixels / 255.0)
