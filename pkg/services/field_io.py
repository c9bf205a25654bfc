"""SQGF snapshot files: one time sample of a field in physical space."""

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from services.spectral import Field

MAGIC = b"SQGF"
VERSION = 1
_HEADER = struct.Struct("<4sIIId")


class SnapshotFormatError(ValueError):
    """The bytes are not a readable SQGF snapshot."""


@dataclass(frozen=True)
class Snapshot:
    time: float
    n: int
    data: np.ndarray  # (ncomp, n, n)

    @property
    def ncomp(self) -> int:
        return self.data.shape[0]


def encode_snapshot(data: Union[Field, np.ndarray], time: float) -> bytes:
    """
    Serialize one sample.

    Args:
        data: A single-time Field, or physical samples shaped (ncomp, n, n) / (n, n)
        time: Sample time

    Returns:
        The SQGF bytes
    """
    samples = data.physical if isinstance(data, Field) else np.asarray(data, dtype=float)
    if samples.ndim == 2:
        samples = samples[None]
    if samples.ndim != 3 or samples.shape[1] != samples.shape[2]:
        raise SnapshotFormatError(f"expected (ncomp, n, n) samples, got shape {samples.shape}")
    ncomp, n, _ = samples.shape
    buffer = io.BytesIO()
    buffer.write(_HEADER.pack(MAGIC, VERSION, n, ncomp, float(time)))
    buffer.write(np.ascontiguousarray(samples, dtype="<f8").tobytes())
    return buffer.getvalue()


def decode_snapshot(raw: bytes) -> Snapshot:
    if len(raw) < _HEADER.size:
        raise SnapshotFormatError(f"snapshot too short: {len(raw)} bytes")
    magic, version, n, ncomp, time = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported version {version}")
    expected = _HEADER.size + 8 * ncomp * n * n
    if len(raw) != expected:
        raise SnapshotFormatError(f"payload size {len(raw)} does not match header ({expected})")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(ncomp, n, n)
    return Snapshot(time=time, n=n, data=data.astype(float))


def write_snapshot(path: Path, data: Union[Field, np.ndarray], time: float) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_snapshot(data, time))
    return path


def read_snapshot(path: Path) -> Snapshot:
    return decode_snapshot(Path(path).read_bytes())
